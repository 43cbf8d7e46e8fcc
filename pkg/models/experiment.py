import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Dict, List, Optional

import numpy as np

from config import Config
from core.exceptions import DomainError
from models.quantizer import Exponent, exponent_to_str, parse_exponent
from models.reconstruction import SolverConfig


class ExperimentKind(str, Enum):
    EPS_VALIDATE = 'EPS_VALIDATE'
    GGD_STAB = 'GGD_STAB'
    QCS_SWEEP = 'QCS_SWEEP'
    QC_HIST = 'QC_HIST'
    UNIFORM_COMPARE = 'UNIFORM_COMPARE'


class RadiusMode(str, Enum):
    LEMMA3 = 'LEMMA3'
    ORACLE = 'ORACLE'


@dataclass(frozen=True)
class SparseSignalSpec:
    """K-sparse signal with Gaussian amplitudes on a uniformly drawn support"""
    N: int
    K: int
    seed: int
    amp_sigma: Optional[float] = None
    normalize: bool = True

    def __post_init__(self):
        if not (1 <= self.K <= self.N):
            raise DomainError(f"Need 1 <= K <= N, got K={self.K}, N={self.N}")
        if self.amp_sigma is not None and self.amp_sigma <= 0:
            raise DomainError(f"amp_sigma must be positive, got {self.amp_sigma}")

    @property
    def sigma(self) -> float:
        return 1.0 / math.sqrt(self.K) if self.amp_sigma is None else self.amp_sigma


@dataclass(frozen=True, eq=False)
class GGDNoiseSpec:
    """Independent GGD(0, alpha_i, shape_p) noise, pdf proportional to exp(-|t/alpha_i|^p)"""
    shape_p: float
    scales: np.ndarray
    seed: int

    def __post_init__(self):
        scales = np.atleast_1d(np.asarray(self.scales, dtype=float))
        object.__setattr__(self, 'scales', scales)
        if not self.shape_p > 0:
            raise DomainError(f"GGD shape must be positive, got {self.shape_p}")
        if not np.all(scales > 0):
            raise DomainError("GGD scales must be positive")


# Grids per kind: (desk, full scale)
_GRIDS = {
    ExperimentKind.EPS_VALIDATE: (
        dict(M=1024, B_list=[3, 4, 5], p_list=list(range(2, 16)), trials=1000),
        dict(M=1024, B_list=[3, 4, 5], p_list=list(range(2, 16)), trials=1000),
    ),
    ExperimentKind.QCS_SWEEP: (
        dict(N=256, K=8, B=4, oversampling_list=[10, 25, 40], p_list=[2, 4, 10], trials=10),
        dict(N=1024, K=16, B=4, oversampling_list=list(range(10, 50, 5)), p_list=[2, 4, 6, 8, 10], trials=50),
    ),
    ExperimentKind.GGD_STAB: (
        dict(N=256, K=8, oversampling_list=[20, 50], p_list=[2], trials=20),
        dict(N=1024, K=16, oversampling_list=list(range(5, 55, 5)), p_list=[2], trials=50),
    ),
    ExperimentKind.QC_HIST: (
        dict(N=256, K=8, B=4, oversampling_list=[40], p_list=[2, 10], trials=20),
        dict(N=1024, K=16, B=4, oversampling_list=[40], p_list=[2, 10], trials=50),
    ),
    ExperimentKind.UNIFORM_COMPARE: (
        dict(N=256, K=8, B=4, oversampling_list=[10, 25, 40], p_list=[2, 4, 10], trials=10),
        dict(N=1024, K=16, B=4, oversampling_list=list(range(10, 50, 5)), p_list=[2, 4, 6, 8, 10], trials=50),
    ),
}


@dataclass
class ExperimentSpec:
    """Declarative configuration of one harness run"""
    kind: ExperimentKind
    N: int = 256
    K: int = 8
    B: int = 4
    oversampling_list: List[int] = field(default_factory=lambda: [10, 25, 40])
    p_list: List[Exponent] = field(default_factory=lambda: [2, 4, 10])
    trials: int = 10
    master_seed: int = field(default_factory=lambda: Config.MASTER_SEED)
    radius_mode: RadiusMode = RadiusMode.LEMMA3
    solver: SolverConfig = field(default_factory=SolverConfig)
    output_path: Optional[str] = None
    # EPS_VALIDATE
    M: int = 1024
    B_list: List[int] = field(default_factory=lambda: [3, 4, 5])
    # GGD_STAB
    sigma0: float = 0.1
    delta0: float = 0.06
    # QCS_SWEEP
    uniform_baseline: bool = False
    workers: int = field(default_factory=lambda: Config.WORKERS)

    def __post_init__(self):
        self.kind = ExperimentKind(self.kind)
        self.radius_mode = RadiusMode(self.radius_mode)
        self.p_list = [parse_exponent(p) for p in self.p_list]
        if isinstance(self.solver, dict):
            self.solver = SolverConfig.from_dict(self.solver)
        if self.trials < 1:
            raise DomainError(f"trials must be >= 1, got {self.trials}")
        if not self.p_list or not self.oversampling_list or not self.B_list:
            raise DomainError("p_list, oversampling_list and B_list must be non-empty")
        if not (1 <= self.K <= self.N):
            raise DomainError(f"Need 1 <= K <= N, got K={self.K}, N={self.N}")
        if any(p < 2 for p in self.p_list):
            raise DomainError(f"Fidelity exponents must be >= 2, got {self.p_list}")
        if not 0 <= self.delta0 < self.sigma0:
            raise DomainError(f"Need 0 <= delta0 < sigma0, got delta0={self.delta0}, sigma0={self.sigma0}")

    @classmethod
    def defaults(cls, kind, paper_scale: bool = False, **overrides) -> 'ExperimentSpec':
        """Desk-scale grid for a kind (full-scale grid on request), overrides applied last"""
        kind = ExperimentKind(kind)
        grid = dict(_GRIDS[kind][1 if paper_scale else 0])
        grid.update({k: v for k, v in overrides.items() if v is not None})
        return cls(kind=kind, **grid)

    def to_dict(self) -> Dict:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data['kind'] = self.kind.value
        data['radius_mode'] = self.radius_mode.value
        data['p_list'] = [exponent_to_str(p) for p in self.p_list]
        data['solver'] = self.solver.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> 'ExperimentSpec':
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


TRIAL_COLUMNS = [
    'trial_index', 'seed', 'M', 'p', 'B', 'variant', 'snr_db', 'iterations',
    'fidelity_residual', 'radius', 'weight_norm', 'qc_rate', 'converged', 'failed', 'wallclock_ms',
]


@dataclass
class TrialRecord:
    """One reconstruction trial, one CSV row"""
    trial_index: int
    seed: int
    M: int
    p: Exponent
    B: int
    variant: str = 'nonuniform'
    snr_db: float = math.nan
    iterations: int = 0
    fidelity_residual: float = math.nan
    radius: float = math.nan
    weight_norm: float = math.nan
    qc_rate: float = math.nan
    converged: bool = False
    failed: bool = False
    wallclock_ms: float = 0.0

    def to_row(self) -> Dict:
        row = asdict(self)
        row['p'] = exponent_to_str(self.p)
        row['converged'] = int(self.converged)
        row['failed'] = int(self.failed)
        for key in ('snr_db', 'fidelity_residual', 'radius', 'weight_norm', 'qc_rate'):
            row[key] = f"{row[key]:.10g}"
        row['wallclock_ms'] = f"{self.wallclock_ms:.1f}"
        return row

    @property
    def sort_key(self):
        return (self.variant, self.M, self.p, self.trial_index)
