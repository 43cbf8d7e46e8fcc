import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional

import numpy as np

from config import Config
from core.exceptions import DomainError, ShapeError
from models.quantizer import Exponent, exponent_to_str

AUTO = None


@dataclass(frozen=True, eq=False)
class WeightedConstraint:
    """Fidelity ball ||Phi x - center||_{p,w} <= radius"""
    p: Exponent
    weights: np.ndarray
    radius: float
    center: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        center = np.asarray(self.center, dtype=float)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'center', center)
        if weights.shape != center.shape or weights.ndim != 1:
            raise ShapeError(f"weights {weights.shape} and center {center.shape} must be equal-length vectors")
        if self.p < 2:
            raise DomainError(f"Fidelity exponent must be in [2, inf], got {self.p}")
        if not np.all(weights > 0):
            raise DomainError("All weights must be strictly positive")
        if not (math.isfinite(self.radius) and self.radius >= 0):
            raise DomainError(f"Radius must be finite and non-negative, got {self.radius}")

    @property
    def M(self) -> int:
        return self.center.size


@dataclass
class SolverConfig:
    """Primal-dual iteration settings; step sizes of None mean AUTO"""
    max_iters: int = field(default_factory=lambda: Config.SOLVER_MAX_ITERS)
    rel_change_tol: float = field(default_factory=lambda: Config.SOLVER_TOL)
    theta: float = 1.0
    step_sigma: Optional[float] = AUTO
    step_tau: Optional[float] = AUTO
    projection_tol: float = field(default_factory=lambda: Config.PROJECTION_TOL)
    projection_max_newton: int = field(default_factory=lambda: Config.PROJECTION_MAX_NEWTON)
    verbose: bool = False

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise DomainError(f"theta must lie in [0, 1], got {self.theta}")
        if (self.step_sigma is None) != (self.step_tau is None):
            raise DomainError("Give both step sizes or neither (AUTO)")
        if self.step_sigma is not None and (self.step_sigma <= 0 or self.step_tau <= 0):
            raise DomainError("Step sizes must be positive")

    @property
    def auto_steps(self) -> bool:
        return self.step_sigma is None

    def to_dict(self) -> Dict:
        return {
            'max_iters': self.max_iters,
            'rel_change_tol': self.rel_change_tol,
            'theta': self.theta,
            'step_sigma': 'AUTO' if self.step_sigma is None else self.step_sigma,
            'step_tau': 'AUTO' if self.step_tau is None else self.step_tau,
            'projection_tol': self.projection_tol,
            'projection_max_newton': self.projection_max_newton,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'SolverConfig':
        data = dict(data or {})
        for key in ('step_sigma', 'step_tau'):
            if str(data.get(key, 'AUTO')).upper() == 'AUTO':
                data[key] = AUTO
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class SolveReport:
    """Output of one GBPDN solve"""
    estimate: np.ndarray
    iterations: int
    final_rel_change: float
    fidelity_residual: float
    objective: float
    converged: bool
    diverged: bool = False
    tau: float = 0.0
    sigma: float = 0.0
    feasibility_rounds: int = 0

    def to_dict(self) -> Dict:
        return {
            'estimate': [float(v) for v in self.estimate],
            'iterations': self.iterations,
            'final_rel_change': self.final_rel_change,
            'fidelity_residual': self.fidelity_residual,
            'objective': self.objective,
            'converged': self.converged,
            'diverged': self.diverged,
            'tau': self.tau,
            'sigma': self.sigma,
            'feasibility_rounds': self.feasibility_rounds,
        }


class ConsistencyKind(str, Enum):
    QC = 'QC'
    DC = 'DC'
    DPC = 'DpC'


@dataclass(frozen=True)
class ConsistencyReport:
    kind: ConsistencyKind
    p: Exponent
    holds: bool
    residual: float
    radius: float

    def to_dict(self) -> Dict:
        return {
            'kind': self.kind.value,
            'p': exponent_to_str(self.p),
            'holds': self.holds,
            'residual': self.residual,
            'radius': self.radius,
        }


@dataclass(frozen=True)
class LpwExpectation:
    """Sandwich on E||xi||_{p,w} for xi ~ N(0, I)"""
    p: Exponent
    upper: float
    lower_factor: float
    theta_p: float
    theta_p_hra: float

    @property
    def lower(self) -> float:
        return self.lower_factor * self.upper

    def to_dict(self) -> Dict:
        return {
            'p': exponent_to_str(self.p),
            'upper': self.upper,
            'lower': self.lower,
            'lower_factor': self.lower_factor,
            'theta_p': self.theta_p,
            'theta_p_hra': self.theta_p_hra,
        }


@dataclass(frozen=True)
class ErrorRatioReport:
    """epsilon/mu of the D_pC program next to its asymptotic bound"""
    M: int
    B: int
    p: Exponent
    epsilon: float
    mu: float
    ratio: float
    bound: float

    def to_dict(self) -> Dict:
        return {
            'M': self.M,
            'B': self.B,
            'p': exponent_to_str(self.p),
            'epsilon': self.epsilon,
            'mu': self.mu,
            'ratio': self.ratio,
            'bound': self.bound,
        }
