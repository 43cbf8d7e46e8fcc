import logging
import math
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

from core.compander_service import CompanderService
from core.exceptions import DomainError, ShapeError
from core.plevel_service import PLevelService
from models.experiment import GGDNoiseSpec, SparseSignalSpec
from models.quantizer import PLevelTable, QuantizerModel

logger = logging.getLogger(__name__)

SIGMA0_RTOL = 1e-6


class QCSMeasurement(NamedTuple):
    bins: np.ndarray
    levels: np.ndarray
    plevels: np.ndarray


class SensingService:
    """Seeded signals, sensing matrices, noise and the quantized measurement pipeline"""

    @staticmethod
    def stream(master_seed: int, *keys: int) -> np.random.Generator:
        """
        Independent Philox substream for (master_seed, keys)

        Streams are addressed by spawn keys, so a trial's draws depend only on
        its own keys and not on how many other trials ran before it.
        """
        seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))
        return np.random.Generator(np.random.Philox(seq))

    @staticmethod
    def derive_seed(master_seed: int, *keys: int) -> int:
        """64-bit seed for a keyed substream"""
        seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))
        return int(seq.generate_state(1, dtype=np.uint64)[0])

    @classmethod
    def gaussian_matrix(cls, M: int, N: int, seed: int) -> np.ndarray:
        """Phi with i.i.d. N(0, 1) entries"""
        if M < 1 or N < 1:
            raise DomainError(f"Matrix dimensions must be positive, got {M}x{N}")
        return cls.stream(seed).standard_normal((M, N))

    @classmethod
    def sparse_signal(cls, spec: SparseSignalSpec) -> np.ndarray:
        """K-sparse vector, support uniform without replacement, normal amplitudes"""
        rng = cls.stream(spec.seed)
        support = rng.choice(spec.N, size=spec.K, replace=False)
        amplitudes = rng.normal(0.0, spec.sigma, size=spec.K)
        # a zero draw would shrink the support
        amplitudes[amplitudes == 0.0] = spec.sigma
        x = np.zeros(spec.N)
        x[support] = amplitudes
        if spec.normalize:
            x /= np.linalg.norm(x)
        return x

    @staticmethod
    def qcs_measure(x, sensing, q: QuantizerModel, table: PLevelTable) -> QCSMeasurement:
        """
        y = Q[Phi x], with the p-optimal re-quantization Q_p[y] read off the bins

        Args:
            x: Signal, length N
            sensing: Matrix Phi, M x N
            q: Quantizer designed for sigma0 = ||x||_2
            table: p-level table of q

        Returns:
            QCSMeasurement(bins, levels, plevels)
        """
        x = np.asarray(x, dtype=float)
        sensing = np.asarray(sensing, dtype=float)
        if sensing.ndim != 2 or sensing.shape[1] != x.size:
            raise ShapeError(f"Sensing matrix {sensing.shape} does not act on a signal of length {x.size}")
        if table.quantizer is not q and (table.B != q.B or table.sigma0 != q.sigma0):
            raise DomainError("p-level table was built for a different quantizer")
        norm = float(np.linalg.norm(x))
        if abs(norm - q.sigma0) > SIGMA0_RTOL * q.sigma0:
            logger.warning(f"Quantizer sigma0={q.sigma0} differs from ||x||_2={norm:.6g}")
        z = sensing @ x
        bins, levels = CompanderService.quantize(z, q)
        _, plevels = PLevelService.quantize_p(z, table)
        return QCSMeasurement(bins=np.atleast_1d(bins), levels=np.atleast_1d(levels),
                              plevels=np.atleast_1d(plevels))

    @staticmethod
    def uniform_step(z, B: int) -> float:
        """alpha' = 2 ||z||_inf / 2^B"""
        zmax = float(np.max(np.abs(z))) if np.size(z) else 0.0
        if zmax == 0.0:
            raise DomainError("Uniform baseline needs a nonzero input")
        return 2.0 * zmax / 2 ** B

    @classmethod
    def uniform_quantize_baseline(cls, z, B: int) -> np.ndarray:
        """
        Midpoint uniform quantizer with 2^B bins over [-||z||_inf, ||z||_inf]

        y = alpha' floor(z / alpha') + alpha'/2; the top edge +||z||_inf is
        clamped into the last bin.
        """
        if int(B) != B or B < 1:
            raise DomainError(f"B must be a positive integer, got {B}")
        z = np.asarray(z, dtype=float)
        step = cls.uniform_step(z, B)
        half = 2 ** (int(B) - 1)
        index = np.clip(np.floor(z / step), -half, half - 1)
        return step * index + step / 2.0

    @staticmethod
    def ggd_scale_for_std(sigma, p: float):
        """GGD scale alpha giving standard deviation sigma: Var = alpha^2 Gamma(3/p) / Gamma(1/p)"""
        factor = math.exp(0.5 * (gammaln(1.0 / p) - gammaln(3.0 / p)))
        return np.asarray(sigma, dtype=float) * factor

    @classmethod
    def ggd_noise(cls, spec: GGDNoiseSpec) -> np.ndarray:
        """Gamma transform: |e| = alpha G^{1/p} with G ~ Gamma(1/p, 1), uniform random sign"""
        rng = cls.stream(spec.seed)
        p = spec.shape_p
        magnitude = spec.scales * rng.gamma(1.0 / p, 1.0, size=spec.scales.size) ** (1.0 / p)
        sign = rng.choice([-1.0, 1.0], size=spec.scales.size)
        return sign * magnitude

    @classmethod
    def heteroscedastic_scales(cls, M: int, sigma0: float, delta0: float, seed: int) -> np.ndarray:
        """sigma_i ~ U[sigma0 - delta0, sigma0 + delta0]"""
        if not 0 <= delta0 < sigma0:
            raise DomainError(f"Need 0 <= delta0 < sigma0, got delta0={delta0}, sigma0={sigma0}")
        return cls.stream(seed).uniform(sigma0 - delta0, sigma0 + delta0, size=M)
