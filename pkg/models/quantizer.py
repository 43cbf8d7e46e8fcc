import math
from dataclasses import dataclass, field
from typing import Dict, Union

import numpy as np

from core.exceptions import DomainError

INF = math.inf

Exponent = Union[int, float]


def parse_exponent(value) -> Exponent:
    """
    Parse an ℓp exponent from user input

    Accepts integers, floats and the strings 'inf' / 'INF' / '+inf'.
    """
    if isinstance(value, str):
        text = value.strip().lower().lstrip('+')
        if text in ('inf', 'infinity'):
            return INF
        value = float(text)
    value = float(value)
    if math.isinf(value):
        return INF
    if value.is_integer():
        return int(value)
    return value


def exponent_to_str(p: Exponent) -> str:
    return 'inf' if math.isinf(p) else str(p)


def _encode_extended(values: np.ndarray) -> list:
    out = []
    for v in values:
        if np.isposinf(v):
            out.append('+inf')
        elif np.isneginf(v):
            out.append('-inf')
        else:
            out.append(float(v))
    return out


def _decode_extended(values: list) -> np.ndarray:
    return np.array([float(v) for v in values], dtype=float)


def _frozen(array) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class GaussianSource:
    """Zero-mean Gaussian measurement source N(0, sigma0^2)"""
    sigma0: float = 1.0

    def __post_init__(self):
        if not (self.sigma0 > 0 and math.isfinite(self.sigma0)):
            raise DomainError(f"sigma0 must be a positive finite real, got {self.sigma0}")

    def pdf(self, t):
        """phi0(t), the source density"""
        t = np.asarray(t, dtype=float)
        s = self.sigma0
        return np.exp(-0.5 * (t / s) ** 2) / (math.sqrt(2.0 * math.pi) * s)


@dataclass(frozen=True, eq=False)
class QuantizerModel:
    """B-bit companded quantizer designed for a Gaussian source"""
    B: int
    sigma0: float
    thresholds: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'thresholds', _frozen(self.thresholds))
        object.__setattr__(self, 'levels', _frozen(self.levels))
        if self.thresholds.size != self.n_bins + 1 or self.levels.size != self.n_bins:
            raise DomainError(
                f"A {self.B}-bit quantizer needs {self.n_bins + 1} thresholds and "
                f"{self.n_bins} levels, got {self.thresholds.size} and {self.levels.size}"
            )

    @property
    def n_bins(self) -> int:
        return 2 ** self.B

    @property
    def alpha(self) -> float:
        """Compressed-domain bin width 2^-B"""
        return 2.0 ** -self.B

    @property
    def source(self) -> GaussianSource:
        return GaussianSource(self.sigma0)

    def to_dict(self) -> Dict:
        """Convert quantizer to dictionary (infinities as strings)"""
        return {
            'B': self.B,
            'sigma0': self.sigma0,
            'thresholds': _encode_extended(self.thresholds),
            'levels': [float(v) for v in self.levels],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'QuantizerModel':
        return cls(
            B=int(data['B']),
            sigma0=float(data['sigma0']),
            thresholds=_decode_extended(data['thresholds']),
            levels=np.array(data['levels'], dtype=float),
        )


@dataclass(frozen=True)
class BinMoment:
    """Quadrature value of E_{k,p}(lambda) and its first two lambda-derivatives"""
    k: int
    p: Exponent
    value: float
    d1: float
    d2: float


@dataclass(frozen=True, eq=False)
class PLevelTable:
    """p-optimal levels of every bin of a reference quantizer"""
    p: Exponent
    quantizer: QuantizerModel
    plevels: np.ndarray
    newton_iters: np.ndarray = field(default=None)
    quadrature_points: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'plevels', _frozen(self.plevels))
        iters = self.newton_iters
        if iters is None:
            iters = np.zeros(self.plevels.size, dtype=int)
        iters = np.array(iters, dtype=int)
        iters.setflags(write=False)
        object.__setattr__(self, 'newton_iters', iters)

    @property
    def B(self) -> int:
        return self.quantizer.B

    @property
    def sigma0(self) -> float:
        return self.quantizer.sigma0

    def to_dict(self) -> Dict:
        """Convert table to dictionary, quantizer included"""
        return {
            'p': exponent_to_str(self.p),
            'quantizer': self.quantizer.to_dict(),
            'plevels': [float(v) for v in self.plevels],
            'newton_iters': [int(v) for v in self.newton_iters],
            'quadrature_points': self.quadrature_points,
        }
