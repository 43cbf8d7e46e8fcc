import logging
import math
from typing import Tuple, Union

import numpy as np
from scipy.special import ndtr, ndtri

from core.exceptions import DomainError
from models.quantizer import GaussianSource, QuantizerModel

logger = logging.getLogger(__name__)

MAX_BITS = 16

ArrayLike = Union[float, np.ndarray]


class CompanderService:
    """Compressor/expander pair and companded quantizer for a Gaussian source"""

    @staticmethod
    def compress(lam: ArrayLike, src: GaussianSource) -> ArrayLike:
        """
        Optimal compressor G, the Gaussian CDF with variance 3*sigma0^2

        Args:
            lam: Value(s) on the extended real line
            src: Gaussian source

        Returns:
            G(lam) in [0, 1]
        """
        lam = np.asarray(lam, dtype=float)
        out = ndtr(lam / (math.sqrt(3.0) * src.sigma0))
        return float(out) if out.ndim == 0 else out

    @staticmethod
    def expand(u: ArrayLike, src: GaussianSource) -> ArrayLike:
        """
        Expander G^-1 on the open unit interval

        Raises:
            DomainError: if any u lies outside (0, 1)
        """
        u = np.asarray(u, dtype=float)
        if np.any(~((u > 0.0) & (u < 1.0))):
            raise DomainError(f"expand is defined on (0, 1) only, got {u}")
        out = math.sqrt(3.0) * src.sigma0 * ndtri(u)
        return float(out) if out.ndim == 0 else out

    @staticmethod
    def qpdf(lam: ArrayLike, src: GaussianSource) -> ArrayLike:
        """Quantizer point density G' = gamma_{0, sqrt(3) sigma0}"""
        lam = np.asarray(lam, dtype=float)
        s = math.sqrt(3.0) * src.sigma0
        out = np.exp(-0.5 * (lam / s) ** 2) / (math.sqrt(2.0 * math.pi) * s)
        return float(out) if out.ndim == 0 else out

    @classmethod
    def design_quantizer(cls, B: int, src: GaussianSource) -> QuantizerModel:
        """
        Build the B-bit companded quantizer

        Thresholds t_k = G^-1((k-1) alpha), levels w_k = G^-1((k-1/2) alpha).
        The negative half is computed and mirrored so the symmetry holds
        exactly.

        Raises:
            DomainError: if B is outside [1, 16]
        """
        if int(B) != B or not (1 <= B <= MAX_BITS):
            raise DomainError(f"B must be an integer in [1, {MAX_BITS}], got {B}")
        B = int(B)
        n = 2 ** B
        alpha = 2.0 ** -B
        half = n // 2

        thresholds = np.empty(n + 1)
        thresholds[0] = -np.inf
        if half > 1:
            thresholds[1:half] = cls.expand(np.arange(1, half) * alpha, src)
        thresholds[half] = 0.0
        thresholds[half + 1:] = -thresholds[half - 1::-1]

        levels = np.empty(n)
        levels[:half] = cls.expand((np.arange(half) + 0.5) * alpha, src)
        levels[half:] = -levels[half - 1::-1]

        logger.debug(f"Designed {B}-bit quantizer for sigma0={src.sigma0}")
        return QuantizerModel(B=B, sigma0=src.sigma0, thresholds=thresholds, levels=levels)

    @staticmethod
    def bin_index(z: ArrayLike, q: QuantizerModel) -> Union[int, np.ndarray]:
        """1-based bin index k with t_k <= z < t_{k+1}"""
        k = np.searchsorted(q.thresholds, np.asarray(z, dtype=float), side='right')
        k = np.clip(k, 1, q.n_bins)
        return int(k) if np.ndim(k) == 0 else k

    @classmethod
    def quantize(cls, z: ArrayLike, q: QuantizerModel) -> Tuple:
        """
        Quantize value(s) with the half-open bin convention [t_k, t_{k+1})

        Returns:
            Tuple of (bin index k, level w_k); arrays for array input
        """
        k = cls.bin_index(z, q)
        levels = q.levels[np.asarray(k) - 1]
        if np.ndim(k) == 0:
            return k, float(levels)
        return k, levels

    @staticmethod
    def panter_dite_mse(q: QuantizerModel) -> float:
        """High-resolution MSE prediction (sqrt(3) pi / 2) sigma0^2 2^-2B"""
        return math.sqrt(3.0) * math.pi / 2.0 * q.sigma0 ** 2 * 2.0 ** (-2 * q.B)

    @staticmethod
    def bin_probabilities(q: QuantizerModel) -> np.ndarray:
        """Source probability p_k of every bin"""
        cdf = ndtr(q.thresholds / q.sigma0)
        return np.diff(cdf)

    @staticmethod
    def clipped_thresholds(q: QuantizerModel, clip: float) -> np.ndarray:
        """Thresholds with the two infinite ends replaced by -/+ clip * sigma0"""
        t = np.array(q.thresholds)
        t[0] = -clip * q.sigma0
        t[-1] = clip * q.sigma0
        return t

    @classmethod
    def bin_widths(cls, q: QuantizerModel, clip: float) -> np.ndarray:
        return np.diff(cls.clipped_thresholds(q, clip))
