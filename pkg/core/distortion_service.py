import logging
import math
from typing import Dict, Optional

import numpy as np
from scipy.special import gammaln

from core.compander_service import CompanderService
from core.exceptions import DomainError, ShapeError
from core.plevel_service import PLevelService
from models.quantizer import INF, Exponent, GaussianSource, PLevelTable, QuantizerModel
from models.reconstruction import (
    ConsistencyKind,
    ConsistencyReport,
    ErrorRatioReport,
    LpwExpectation,
)

logger = logging.getLogger(__name__)

# c' = (9/8) (e pi / 3)^(1/2)
ERROR_RATIO_CONSTANT = 9.0 / 8.0 * math.sqrt(math.e * math.pi / 3.0)


def _phi0_norm_third(src: GaussianSource) -> float:
    """||phi0||_{1/3} = 2 pi sigma0^2 3^{3/2}"""
    return 2.0 * math.pi * src.sigma0 ** 2 * 3.0 ** 1.5


def _check_fidelity_exponent(p: Exponent):
    if not (math.isinf(p) or p >= 2):
        raise DomainError(f"Fidelity exponent must be in [2, inf], got {p}")


class DistortionService:
    """Weighted lp norms, D_pC weights and radii, consistency checks and diagnostics"""

    @staticmethod
    def weighted_lp_norm(v, w, p: Exponent) -> float:
        """
        ||v||_{p,w} = ||diag(w) v||_p, computed with max-scaling

        Args:
            v: Vector of M reals
            w: Vector of M positive weights
            p: Exponent in [1, inf]

        Returns:
            Non-negative norm value
        """
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        if v.shape != w.shape:
            raise ShapeError(f"Vector {v.shape} and weights {w.shape} differ in shape")
        if not (math.isinf(p) or p >= 1):
            raise DomainError(f"p must be in [1, inf], got {p}")
        a = np.abs(w * v)
        if a.size == 0:
            return 0.0
        m = float(a.max())
        if m == 0.0 or math.isinf(p):
            return m
        return m * float(np.sum((a / m) ** p)) ** (1.0 / p)

    @staticmethod
    def dpc_weights(quantized_levels, p: Exponent, src: GaussianSource) -> np.ndarray:
        """w_i = G'(Q_p[y_i])^((p-2)/p); the exponent is 1 for p = inf"""
        _check_fidelity_exponent(p)
        levels = np.atleast_1d(np.asarray(quantized_levels, dtype=float))
        if p == 2:
            return np.ones_like(levels)
        exponent = 1.0 if math.isinf(p) else (p - 2.0) / p
        return np.asarray(CompanderService.qpdf(levels, src)) ** exponent

    @staticmethod
    def epsilon_p(M: int, B: int, p: Exponent, src: GaussianSource) -> float:
        """
        Asymptotic radius of ||Q_p[z] - z||_{p,w}

        eps_p^p = M 2^{-Bp} / ((p+1) 2^p) ||phi0||_{1/3}; the p = inf limit is 2^{-(B+1)}.
        Evaluated in log form so large p does not underflow.
        """
        if M < 1 or B < 1:
            raise DomainError(f"epsilon_p needs M >= 1 and B >= 1, got M={M}, B={B}")
        _check_fidelity_exponent(p)
        if math.isinf(p):
            return 2.0 ** -(B + 1)
        log_eps_p = (math.log(M) - (B + 1) * p * math.log(2.0)
                     - math.log(p + 1.0) + math.log(_phi0_norm_third(src)))
        return math.exp(log_eps_p / p)

    @classmethod
    def check_consistency(cls, x_est, sensing, y_levels, kind, q: QuantizerModel,
                          table: Optional[PLevelTable] = None) -> ConsistencyReport:
        """
        Test an estimate against one of the QC / DC / DpC constraints

        Args:
            x_est: Estimate, length N
            sensing: Matrix Phi, M x N
            y_levels: Observed quantized measurements (any value inside the observed bin)
            kind: 'QC', 'DC' or 'DpC'
            q: Reference quantizer the observations came from
            table: p-level table, required for DpC

        Returns:
            ConsistencyReport with the residual next to the radius it is compared with
        """
        kind = ConsistencyKind(kind)
        x_est = np.asarray(x_est, dtype=float)
        sensing = np.asarray(sensing, dtype=float)
        y_levels = np.asarray(y_levels, dtype=float)
        if sensing.ndim != 2 or sensing.shape != (y_levels.size, x_est.size):
            raise ShapeError(
                f"Sensing matrix {sensing.shape} does not match estimate {x_est.shape} "
                f"and observations {y_levels.shape}"
            )
        z = sensing @ x_est
        src = q.source
        bins = CompanderService.bin_index(y_levels, q)
        M = y_levels.size

        if kind is ConsistencyKind.QC:
            holds = bool(np.all(CompanderService.bin_index(z, q) == bins))
            # G(y) is the bin centre (k - 1/2) alpha in the compressed domain
            residual = float(np.max(np.abs(CompanderService.compress(z, src) - (bins - 0.5) * q.alpha)))
            return ConsistencyReport(kind=kind, p=INF, holds=holds, residual=residual, radius=q.alpha / 2)

        if kind is ConsistencyKind.DC:
            radius = cls.epsilon_p(M, q.B, 2, src)
            residual = float(np.linalg.norm(z - y_levels))
            return ConsistencyReport(kind=kind, p=2, holds=residual <= radius, residual=residual, radius=radius)

        if table is None:
            raise DomainError("DpC consistency needs a p-level table")
        if table.B != q.B or table.sigma0 != q.sigma0:
            raise DomainError("p-level table was built for a different quantizer")
        centers = table.plevels[np.asarray(bins) - 1]
        weights = cls.dpc_weights(centers, table.p, src)
        radius = cls.epsilon_p(M, q.B, table.p, src)
        residual = cls.weighted_lp_norm(z - centers, weights, table.p)
        return ConsistencyReport(kind=kind, p=table.p, holds=residual <= radius,
                                 residual=residual, radius=radius)

    @staticmethod
    def gaussian_moment_root(p: Exponent) -> float:
        """nu_p = (E|Z|^p)^{1/p}, with E|Z|^p = 2^{p/2} pi^{-1/2} Gamma((p+1)/2)"""
        if math.isinf(p) or p < 1:
            raise DomainError(f"nu_p needs a finite p >= 1, got {p}")
        log_moment = 0.5 * p * math.log(2.0) - 0.5 * math.log(math.pi) + gammaln((p + 1.0) / 2.0)
        return math.exp(log_moment / p)

    @classmethod
    def gaussian_lpw_expectation(cls, w, p: Exponent) -> float:
        """mu = nu_p ||w||_p, the upper estimate of E||xi||_{p,w} for xi ~ N(0, I_M)"""
        w = np.asarray(w, dtype=float)
        return cls.gaussian_moment_root(p) * cls.weighted_lp_norm(np.ones_like(w), w, p)

    @classmethod
    def lpw_expectation_bounds(cls, w, p: Exponent) -> LpwExpectation:
        """
        Two-sided estimate of E||xi||_{p,w}

        The lower bound is (1 + 2^{p+1} theta_p^p / M)^{1/p - 1} times the upper
        one. theta_p = (max w / (M^{-1/p} ||w||_p))^2 is taken from the realized
        weights; the high-resolution estimate ((p+1)/3)^{1/p} of D_pC weights is
        reported alongside.
        """
        w = np.asarray(w, dtype=float)
        if w.size == 0 or np.any(w <= 0):
            raise DomainError("Weights must be a non-empty vector of positive reals")
        M = w.size
        upper = cls.gaussian_lpw_expectation(w, p)
        rho_min = M ** (-1.0 / p) * cls.weighted_lp_norm(np.ones_like(w), w, p)
        theta = (float(w.max()) / rho_min) ** 2
        log_term = math.log1p(math.exp((p + 1) * math.log(2.0) + p * math.log(theta) - math.log(M)))
        lower_factor = math.exp((1.0 / p - 1.0) * log_term)
        return LpwExpectation(p=p, upper=upper, lower_factor=lower_factor,
                              theta_p=theta, theta_p_hra=((p + 1.0) / 3.0) ** (1.0 / p))

    @staticmethod
    def expected_weight_moment(table: PLevelTable) -> Dict[str, float]:
        """
        M^{-1} E||w||_p^p for D_pC weights: sum_k p_k G'(w_{k,p})^{p-2}

        Returns:
            Dictionary with the exact bin sum and its high-resolution closed form
        """
        p = table.p
        _check_fidelity_exponent(p)
        if math.isinf(p):
            raise DomainError("The weight moment needs a finite p")
        src = table.quantizer.source
        probs = CompanderService.bin_probabilities(table.quantizer)
        g = np.asarray(CompanderService.qpdf(table.plevels, src))
        exact = float(math.fsum(probs * g ** (p - 2)))
        s2 = 2.0 * math.pi * src.sigma0 ** 2
        hra = s2 ** ((2.0 - p) / 2.0) * 3.0 ** ((3.0 - p) / 2.0) / math.sqrt(p + 1.0)
        return {'exact': exact, 'hra': hra}

    @classmethod
    def error_ratio_diagnostic(cls, M: int, B: int, p: Exponent, src: GaussianSource,
                               plevels: Optional[PLevelService] = None) -> ErrorRatioReport:
        """
        eps_p / mu for the D_pC program at (M, B, p), with mu taken over the
        expected D_pC weights, next to the asymptotic bound
        c' 2^{-B} (p+1)^{-1/(2p)} / sqrt(p+1) (scaled by sigma0)
        """
        if math.isinf(p):
            raise DomainError("The error ratio is defined for finite p only")
        plevels = plevels or PLevelService()
        q = CompanderService.design_quantizer(B, src)
        table = plevels.plevel_table(p, q)
        eps = cls.epsilon_p(M, B, p, src)
        moment = cls.expected_weight_moment(table)['exact']
        mu = cls.gaussian_moment_root(p) * (M * moment) ** (1.0 / p)
        bound = (ERROR_RATIO_CONSTANT * src.sigma0 * 2.0 ** -B
                 * (p + 1.0) ** (-1.0 / (2.0 * p)) / math.sqrt(p + 1.0))
        logger.debug(f"Error ratio M={M} B={B} p={p}: eps={eps:.6g} mu={mu:.6g}")
        return ErrorRatioReport(M=M, B=B, p=p, epsilon=eps, mu=mu, ratio=eps / mu, bound=bound)

    @staticmethod
    def transition_threshold(B: int, src: GaussianSource, beta: float = 0.5) -> float:
        """T(B) = sqrt(6 sigma0^2 log(2^beta) B), the edge of the high-resolution region"""
        if not 0.0 < beta < 1.0:
            raise DomainError(f"beta must lie in (0, 1), got {beta}")
        return math.sqrt(6.0 * src.sigma0 ** 2 * beta * math.log(2.0) * B)

    @staticmethod
    def bin_contributions(table: PLevelTable, plevels: Optional[PLevelService] = None) -> np.ndarray:
        """Per-bin [G'(w_{k,p})]^{p-2} int_{R_k} |t - w_{k,p}|^p phi0(t) dt"""
        plevels = plevels or PLevelService()
        distortion = plevels.bin_distortion(table)
        g = np.asarray(CompanderService.qpdf(table.plevels, table.quantizer.source))
        return g ** (table.p - 2) * distortion

    @staticmethod
    def stabilized_contribution(B: int, p: int, src: GaussianSource) -> float:
        """Common value ||phi0||_{1/3} alpha^{p+1} / ((p+1) 2^p) of the bin contributions"""
        alpha = 2.0 ** -B
        return _phi0_norm_third(src) * alpha ** (p + 1) / ((p + 1) * 2.0 ** p)

    @staticmethod
    def two_level_stabilization(H: float, r: float, p: Exponent) -> Dict[str, float]:
        """
        Noise scales alpha_i in {1, H} with a fraction r equal to H, weights 1/alpha_i

        Returns:
            gain: (E / E_st)^{1/p}, ratio of unstabilized to stabilized eps/mu
            gain_asymptote: (r (1 - r))^{1/p} H, the large-H form
            overhead: theta_p^{p/2} = (r H^-p + 1 - r)^-1, the measurement overhead
        """
        if H < 1:
            raise DomainError(f"H must be >= 1, got {H}")
        if not 0.0 <= r <= 1.0:
            raise DomainError(f"r must lie in [0, 1], got {r}")
        if math.isinf(p) or p < 1:
            raise DomainError(f"p must be finite and >= 1, got {p}")
        low = r * H ** -p + (1.0 - r)
        high = r * H ** p + (1.0 - r)
        return {
            'gain': (low * high) ** (1.0 / p),
            'gain_asymptote': (r * (1.0 - r)) ** (1.0 / p) * H,
            'overhead': 1.0 / low,
        }

    @staticmethod
    def rip_measurement_condition(M: int, N: int, K: int, p: Exponent, delta: float,
                                  eta: float, theta_p: float, c: float) -> Dict:
        """
        Evaluate the sufficient measurement condition for a Gaussian RIP_{p,w} matrix

            M^{2/max(2,p)} >= c delta^-2 theta_p (K log(e N/K (1 + 12/delta)) + log(2/eta))
            M >= 2 (2 theta_p)^p

        The constant c is not known; whatever the caller passes is used as is,
        so the result documents the scaling and certifies nothing.
        """
        if not (0 < delta and 0 < eta < 1 and 1 <= K <= N):
            raise DomainError("Need delta > 0, 0 < eta < 1 and 1 <= K <= N")
        exponent = 0.0 if math.isinf(p) else 2.0 / max(2.0, p)
        lhs = M ** exponent
        rhs = c / delta ** 2 * theta_p * (
            K * math.log(math.e * N / K * (1.0 + 12.0 / delta)) + math.log(2.0 / eta))
        if math.isinf(p):
            min_m = math.inf
        else:
            min_m = 2.0 * (2.0 * theta_p) ** p
        return {
            'lhs': lhs,
            'rhs': rhs,
            'min_measurements': min_m,
            'satisfied': bool(lhs >= rhs and M >= min_m),
            'certified': False,
        }
