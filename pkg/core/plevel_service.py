import logging
import math
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import quad, simpson

from config import Config
from core.compander_service import CompanderService
from core.exceptions import ConvergenceError, DomainError
from models.quantizer import INF, BinMoment, Exponent, PLevelTable, QuantizerModel

logger = logging.getLogger(__name__)

CONVERGENCE_TOL = 1e-15


def _check_exponent(p: Exponent, allow_inf: bool = True):
    if math.isinf(p):
        if not allow_inf:
            raise DomainError("p = inf has no moment integral; use the bin midpoint")
        return
    if int(p) != p or p < 2:
        raise DomainError(f"p must be an integer >= 2 (or inf), got {p}")


class PLevelService:
    """p-optimal quantizer levels by Newton iteration over Simpson moments"""

    def __init__(self, n_quad: Optional[int] = None, clip: Optional[float] = None,
                 max_iter: Optional[int] = None):
        self.n_quad = Config.QUAD_POINTS if n_quad is None else int(n_quad)
        self.clip = Config.QUAD_CLIP if clip is None else float(clip)
        self.max_iter = Config.NEWTON_MAX_ITER if max_iter is None else int(max_iter)
        self._check_n_quad(self.n_quad)

    @staticmethod
    def _check_n_quad(n_quad: int):
        if n_quad < 3 or n_quad % 2 == 0:
            raise DomainError(f"Simpson quadrature needs an odd number of points >= 3, got {n_quad}")

    def bin_edges(self, k: int, q: QuantizerModel) -> Tuple[float, float]:
        """Edges of bin k (1-based), infinite ends clipped at +/- clip * sigma0"""
        if not (1 <= k <= q.n_bins):
            raise DomainError(f"Bin index {k} outside [1, {q.n_bins}]")
        limit = self.clip * q.sigma0
        a = max(float(q.thresholds[k - 1]), -limit)
        b = min(float(q.thresholds[k]), limit)
        return a, b

    def _nodes(self, k: int, q: QuantizerModel, n_quad: int) -> Tuple[np.ndarray, np.ndarray]:
        a, b = self.bin_edges(k, q)
        x = np.linspace(a, b, n_quad)
        return x, q.source.pdf(x)

    @staticmethod
    def _moments(x: np.ndarray, phi: np.ndarray, p: int, lam: float) -> Tuple[float, float, float]:
        d = x - lam
        ad = np.abs(d)
        value = simpson(phi * ad ** p, x=x)
        d1 = -p * simpson(phi * ad ** (p - 1) * np.sign(d), x=x)
        d2 = p * (p - 1) * simpson(phi * ad ** (p - 2), x=x)
        return value, d1, d2

    def bin_moment(self, k: int, p: int, lam: float, q: QuantizerModel,
                   n_quad: Optional[int] = None) -> BinMoment:
        """
        Simpson approximation of E_{k,p}(lam) = int_{R_k} |t - lam|^p phi0(t) dt

        Args:
            k: 1-based bin index
            p: Integer exponent >= 2
            lam: Point at which the moment and its derivatives are taken
            q: Reference quantizer
            n_quad: Odd number of quadrature points (defaults to the service setting)

        Returns:
            BinMoment with value, first and second lam-derivative
        """
        n_quad = self.n_quad if n_quad is None else int(n_quad)
        self._check_n_quad(n_quad)
        _check_exponent(p, allow_inf=False)
        x, phi = self._nodes(k, q, n_quad)
        value, d1, d2 = self._moments(x, phi, int(p), float(lam))
        return BinMoment(k=k, p=int(p), value=value, d1=d1, d2=d2)

    def _solve_bin(self, k: int, p: int, q: QuantizerModel) -> Tuple[float, int]:
        x, phi = self._nodes(k, q, self.n_quad)
        lo, hi = float(x[0]), float(x[-1])
        if k == 1 and q.n_bins > 1:
            lam = float(q.thresholds[1])
        elif k == q.n_bins:
            lam = float(q.thresholds[k - 1])
        else:
            lam = 0.5 * (lo + hi)
        lam = min(max(lam, lo), hi)

        for it in range(1, self.max_iter + 1):
            _, d1, d2 = self._moments(x, phi, p, lam)
            if d1 == 0.0:
                return lam, it
            # E' < 0 left of the minimizer, > 0 right of it
            if d1 < 0.0:
                lo = lam
            else:
                hi = lam
            step = d1 / d2 if d2 > 0.0 else math.inf
            candidate = lam - step
            if not (lo <= candidate <= hi):
                logger.debug(f"Bin {k}, p={p}: Newton left bracket, bisecting")
                candidate = 0.5 * (lo + hi)
            delta = abs(candidate - lam)
            lam = candidate
            if (delta < CONVERGENCE_TOL * abs(lam)
                    or delta < CONVERGENCE_TOL * q.sigma0
                    or delta <= 4.0 * np.spacing(abs(lam))
                    or hi - lo <= 4.0 * np.spacing(max(abs(lo), abs(hi)))):
                return lam, it

        raise ConvergenceError(
            f"Newton iteration for bin {k} (p={p}) did not converge in {self.max_iter} steps",
            diagnostics={'k': k, 'p': p, 'lambda': lam, 'bracket': (lo, hi)},
        )

    def newton_plevel(self, k: int, p: int, q: QuantizerModel) -> float:
        """
        Unique minimizer of E_{k,p} over bin k

        Raises:
            ConvergenceError: if the safeguarded Newton scheme stalls
        """
        _check_exponent(p, allow_inf=False)
        lam, _ = self._solve_bin(k, int(p), q)
        return lam

    def plevel_table(self, p: Exponent, q: QuantizerModel) -> PLevelTable:
        """
        p-optimal levels of all bins

        For p = inf the levels are the midpoints of the (clipped) bins. Only the
        lower half of the bins is solved; the upper half is mirrored.
        """
        _check_exponent(p)
        n = q.n_bins
        half = n // 2
        plevels = np.empty(n)
        iters = np.zeros(n, dtype=int)

        if math.isinf(p):
            for k in range(1, half + 1):
                a, b = self.bin_edges(k, q)
                plevels[k - 1] = 0.5 * (a + b)
            p_value = INF
        else:
            p_value = int(p)
            for k in range(1, half + 1):
                plevels[k - 1], iters[k - 1] = self._solve_bin(k, p_value, q)
        plevels[half:] = -plevels[half - 1::-1]
        iters[half:] = iters[half - 1::-1]

        logger.debug(f"p-level table: B={q.B}, p={p}, max Newton iterations {iters.max()}")
        return PLevelTable(p=p_value, quantizer=q, plevels=plevels,
                           newton_iters=iters, quadrature_points=self.n_quad)

    @staticmethod
    def quantize_p(z, table: PLevelTable) -> Tuple:
        """
        Re-quantizer Q_p: same thresholds as the reference quantizer, p-optimal levels

        Returns:
            Tuple of (bin index, w_{k,p}); arrays for array input
        """
        k = CompanderService.bin_index(z, table.quantizer)
        levels = table.plevels[np.asarray(k) - 1]
        if np.ndim(k) == 0:
            return k, float(levels)
        return k, levels

    def bin_distortion(self, table: PLevelTable) -> np.ndarray:
        """Per-bin p-th power distortion int_{R_k} |t - w_{k,p}|^p phi0(t) dt"""
        _check_exponent(table.p, allow_inf=False)
        q = table.quantizer
        out = np.empty(q.n_bins)
        for k in range(1, q.n_bins + 1):
            x, phi = self._nodes(k, q, self.n_quad)
            out[k - 1] = simpson(phi * np.abs(x - table.plevels[k - 1]) ** table.p, x=x)
        return out

    @staticmethod
    def _density_range(k: int, q: QuantizerModel) -> Tuple[float, float, float, float]:
        a, b = float(q.thresholds[k - 1]), float(q.thresholds[k])
        if not (math.isfinite(a) and math.isfinite(b)):
            raise DomainError(f"Bin {k} is semi-infinite; the bound needs a finite bin")
        src = q.source
        ends = src.pdf(np.array([a, b]))
        peak = float(src.pdf(0.0)) if a <= 0.0 <= b else float(ends.max())
        return a, b, float(ends.min()), peak

    def level_bracket(self, k: int, p: int, q: QuantizerModel) -> Tuple[float, float]:
        """
        Interval that must contain w_{k,p} for a finite bin [a, b]

        With S = max phi0 / min phi0 over the bin:
        (S^{1/p} a + b)/(1 + S^{1/p}) <= w_{k,p} <= (a + S^{1/p} b)/(1 + S^{1/p}).
        """
        _check_exponent(p, allow_inf=False)
        a, b, low, high = self._density_range(k, q)
        r = (high / low) ** (1.0 / p)
        return (r * a + b) / (1.0 + r), (a + r * b) / (1.0 + r)

    def optimal_moment_bounds(self, k: int, p: int, q: QuantizerModel) -> Tuple[float, float]:
        """
        Bounds on the minimal bin moment E_{k,p}(w_{k,p}) of a finite bin

        With C, D the min and max of phi0 on [a, b] and c = (b-a)^{p+1} / ((p+1) 2^{p+1}):
        c (1 + (D/C)^{-(p+1)/p}) C <= E_{k,p}(w_{k,p}) <= c (1 + (D/C)^{(p+1)/p}) D.
        """
        _check_exponent(p, allow_inf=False)
        a, b, low, high = self._density_range(k, q)
        c = (b - a) ** (p + 1) / ((p + 1) * 2.0 ** (p + 1))
        s = high / low
        return (c * (1.0 + s ** (-(p + 1.0) / p)) * low,
                c * (1.0 + s ** ((p + 1.0) / p)) * high)

    @staticmethod
    def tail_moment(lam: float, n: int) -> float:
        """Q_n(lam) = int_lam^inf (t - lam)^n phi(t) dt for the standard normal pdf"""
        def integrand(t):
            return (t - lam) ** n * math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)

        value, _ = quad(integrand, lam, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)
        return value

    @staticmethod
    def tail_moment_bounds(lam: float, n: int) -> Tuple[float, float]:
        """
        Two-sided bound on Q_n(lam), lam > 0

        n! lam^{n+1} / prod_{k=1}^{n+1}(lam^2 + k) phi(lam) <= Q_n(lam) <= n! / lam^{n+1} phi(lam)
        """
        if lam <= 0:
            raise DomainError(f"Tail moment bounds need lam > 0, got {lam}")
        phi = math.exp(-0.5 * lam * lam) / math.sqrt(2.0 * math.pi)
        fact = math.factorial(n)
        denom = math.prod(lam * lam + k for k in range(1, n + 2))
        lower = fact * lam ** (n + 1) / denom * phi
        upper = fact / lam ** (n + 1) * phi
        return lower, upper
