import csv
import logging
import math
import sys
from typing import Dict, Optional, TextIO, Tuple

import numpy as np
from scipy.optimize import brentq

from config import Config
from core.exceptions import ConvergenceError, DomainError, ShapeError
from models.quantizer import Exponent
from models.reconstruction import SolveReport, SolverConfig, WeightedConstraint

logger = logging.getLogger(__name__)

INNER_NEWTON_STEPS = 100
# Converged runs satisfy residual <= FEASIBILITY_SLACK * eps
FEASIBILITY_SLACK = 1e-5
FEASIBILITY_MARGIN = 5e-6
FEASIBILITY_ROUNDS = 100
TRACE_HEADER = ['iter', 'rel_change', 'fidelity_residual', 'objective']


def _lp_norm(v: np.ndarray, p: Exponent) -> float:
    a = np.abs(v)
    if a.size == 0:
        return 0.0
    m = float(a.max())
    if m == 0.0 or math.isinf(p):
        return m
    return m * float(np.sum((a / m) ** p)) ** (1.0 / p)


def _check_ball(p: Exponent, radius: float):
    if not (math.isinf(p) or p >= 2):
        raise DomainError(f"Projection exponent must be in [2, inf], got {p}")
    if not (radius > 0 and math.isfinite(radius)):
        raise DomainError(f"Ball radius must be positive and finite, got {radius}")


class SolverService:
    """GBPDN(l_{p,w}) by the relaxed primal-dual (Chambolle-Pock) iteration"""

    @staticmethod
    def soft_threshold(u, tau: float) -> np.ndarray:
        """Componentwise sign(u) max(|u| - tau, 0)"""
        u = np.asarray(u, dtype=float)
        return np.sign(u) * np.maximum(np.abs(u) - tau, 0.0)

    @staticmethod
    def _shrink(a: np.ndarray, lam: float, p: float) -> Tuple[np.ndarray, np.ndarray]:
        """
        Solve s + lam p s^{p-1} = a for every a >= 0, with ds/dlam

        Newton started right of the root, where the convex left side makes
        the iterates decrease monotonically onto it.
        """
        s = a.copy()
        if lam > 0.0:
            pos = a > 0.0
            ap = a[pos]
            sp = np.minimum(ap, (ap / (lam * p)) ** (1.0 / (p - 1.0)))
            for _ in range(INNER_NEWTON_STEPS):
                h = sp + lam * p * sp ** (p - 1.0) - ap
                dh = 1.0 + lam * p * (p - 1.0) * sp ** (p - 2.0)
                nxt = np.maximum(sp - h / dh, 0.0)
                done = np.max(np.abs(nxt - sp)) <= 1e-15 * max(float(np.max(nxt)), 1e-300)
                sp = nxt
                if done:
                    break
            s[pos] = sp
        ds = -p * s ** (p - 1.0) / (1.0 + lam * p * (p - 1.0) * s ** (p - 2.0))
        return s, ds

    @classmethod
    def project_lp_ball(cls, v, p: Exponent, radius: float, tol: Optional[float] = None,
                        max_newton: Optional[int] = None) -> np.ndarray:
        """
        Euclidean projection of v onto {z : ||z||_p <= radius}

        p = 2 scales radially and p = inf clips. For 2 < p < inf the KKT system
        z_i + lam p |z_i|^{p-1} sign(z_i) = v_i is reduced to the scalar equation
        sum_i s_i(lam)^p = 1 on the unit ball, solved by Newton on lam with a
        bisection fallback inside [0, ||v/r||_q / p].

        Raises:
            ConvergenceError: if the multiplier search stalls before the bracket collapses
        """
        return cls._project(v, p, radius, tol, max_newton)[0]

    @classmethod
    def _project(cls, v, p: Exponent, radius: float, tol: Optional[float] = None,
                 max_newton: Optional[int] = None, lam0: float = 0.0) -> Tuple[np.ndarray, float]:
        """Projection plus the unit-ball multiplier; lam0 seeds the Newton search"""
        _check_ball(p, radius)
        tol = Config.PROJECTION_TOL if tol is None else tol
        max_newton = Config.PROJECTION_MAX_NEWTON if max_newton is None else max_newton
        v = np.asarray(v, dtype=float)

        if math.isinf(p):
            return np.clip(v, -radius, radius), 0.0
        norm = _lp_norm(v, p)
        if norm <= radius * (1.0 + tol):
            return v.copy(), 0.0
        if p == 2:
            return v * (radius / norm), 0.0

        # unit ball
        a = np.abs(v) / radius
        q = p / (p - 1.0)
        lo, hi = 0.0, _lp_norm(a, q) / p
        lam = lam0 if 0.0 < lam0 < hi else 0.0
        s = a
        for it in range(1, max_newton + 1):
            s, ds = cls._shrink(a, lam, p)
            f = float(np.sum(s ** p)) - 1.0
            if abs(f) <= tol:
                break
            if f > 0.0:
                lo = lam
            else:
                hi = lam
            slope = float(np.sum(p * s ** (p - 1.0) * ds))
            candidate = lam - f / slope if slope < 0.0 else math.nan
            if not (lo < candidate < hi):
                candidate = 0.5 * (lo + hi)
            if hi - lo <= 4.0 * np.spacing(hi):
                logger.debug(f"Projection bracket collapsed at lam={lam} after {it} steps")
                break
            lam = candidate
        else:
            raise ConvergenceError(
                f"lp-ball projection (p={p}) did not converge in {max_newton} steps",
                diagnostics={'p': p, 'lambda': lam, 'bracket': (lo, hi), 'residual': f},
            )

        # Snap onto the sphere so a second projection is the identity
        s = s / _lp_norm(s, p)
        return np.sign(v) * radius * s, lam

    @staticmethod
    def kkt_residual(z, v, p: Exponent) -> float:
        """
        Collinearity defect of v - z with the gradient |z|^{p-1} sign(z) of ||z||_p^p

        Zero when z is the projection of an exterior point v onto an lp sphere.
        A negative multiplier counts as a defect as well.
        """
        if math.isinf(p):
            raise DomainError("KKT residual is defined for finite p")
        z = np.asarray(z, dtype=float)
        v = np.asarray(v, dtype=float)
        g = v - z
        n = np.abs(z) ** (p - 1.0) * np.sign(z)
        nn = float(n @ n)
        scale = max(float(np.linalg.norm(v)), 1.0)
        if nn == 0.0:
            return float(np.linalg.norm(g)) / scale
        mult = float(g @ n) / nn
        defect = float(np.linalg.norm(g - mult * n))
        return (defect + max(-mult, 0.0) * math.sqrt(nn)) / scale

    @classmethod
    def bisection_projection(cls, v, p: Exponent, radius: float) -> np.ndarray:
        """Slow projection by nested bracketing root searches, used as a check"""
        _check_ball(p, radius)
        v = np.asarray(v, dtype=float)
        if math.isinf(p) or p == 2 or _lp_norm(v, p) <= radius:
            return cls.project_lp_ball(v, p, radius)
        a = np.abs(v) / radius

        def shrink(lam):
            out = np.zeros_like(a)
            for i, ai in enumerate(a):
                if ai > 0.0:
                    out[i] = brentq(lambda t: t + lam * p * t ** (p - 1.0) - ai, 0.0, ai,
                                    xtol=1e-15, rtol=4 * np.finfo(float).eps)
            return out

        hi = _lp_norm(a, p / (p - 1.0)) / p
        lam = brentq(lambda t: float(np.sum(shrink(t) ** p)) - 1.0, 0.0, hi,
                     xtol=1e-15, rtol=4 * np.finfo(float).eps)
        return np.sign(v) * radius * shrink(lam)

    @classmethod
    def projection_self_check(cls, v, p: Exponent, radius: float) -> Dict[str, float]:
        """Sphere error, KKT defect, idempotence and distance to the bisection result"""
        v = np.asarray(v, dtype=float)
        z = cls.project_lp_ball(v, p, radius)
        zz = cls.project_lp_ball(z, p, radius)
        oracle = cls.bisection_projection(v, p, radius)
        exterior = _lp_norm(v, p) > radius
        return {
            'p': p,
            'radius': radius,
            'input_norm': _lp_norm(v, p),
            'output_norm': _lp_norm(z, p),
            'sphere_error': abs(_lp_norm(z, p) - radius) if exterior else 0.0,
            'kkt_residual': cls.kkt_residual(z, v, p) if exterior and not math.isinf(p) else 0.0,
            'idempotence_error': float(np.max(np.abs(zz - z))) if z.size else 0.0,
            'oracle_distance': float(np.max(np.abs(z - oracle))) if z.size else 0.0,
        }

    @classmethod
    def prox_dual_fidelity(cls, v, sigma: float, y_center, p: Exponent, radius: float,
                           tol: Optional[float] = None, max_newton: Optional[int] = None) -> np.ndarray:
        """
        prox of sigma g* for g the indicator of {u : ||u - y||_p <= radius}

        By Moreau's identity this is (v - sigma y) - proj_{B_p(sigma radius)}(v - sigma y).
        """
        return cls._prox_dual(v, sigma, y_center, p, radius, tol, max_newton)[0]

    @classmethod
    def _prox_dual(cls, v, sigma, y_center, p, radius, tol=None, max_newton=None,
                   lam0: float = 0.0) -> Tuple[np.ndarray, float]:
        w = np.asarray(v, dtype=float) - sigma * np.asarray(y_center, dtype=float)
        z, lam = cls._project(w, p, sigma * radius, tol=tol, max_newton=max_newton, lam0=lam0)
        return w - z, lam

    @staticmethod
    def operator_norm(mat, tol: float = 1e-10, max_iter: int = 5000) -> float:
        """
        Spectral norm by power iteration on mat^T mat

        The start vector comes from a fixed-seed generator so the estimate is
        reproducible; a start that collapses to zero is redrawn.
        """
        mat = np.asarray(mat, dtype=float)
        if mat.ndim != 2 or mat.size == 0:
            raise ShapeError(f"operator_norm needs a non-empty matrix, got shape {mat.shape}")
        rng = np.random.Generator(np.random.Philox(0))
        x = rng.standard_normal(mat.shape[1])
        x /= np.linalg.norm(x)
        estimate = 0.0
        restarts = 0
        for _ in range(max_iter):
            y = mat.T @ (mat @ x)
            lam = float(np.linalg.norm(y))
            if lam == 0.0:
                restarts += 1
                if restarts > 3 or not np.any(mat):
                    raise DomainError("operator_norm of a zero matrix")
                x = rng.standard_normal(mat.shape[1])
                x /= np.linalg.norm(x)
                continue
            x = y / lam
            if abs(lam - estimate) <= tol * lam:
                estimate = lam
                break
            estimate = lam
        return math.sqrt(estimate)

    @classmethod
    def gbpdn_solve(cls, y_center, sensing, constraint: WeightedConstraint,
                    cfg: Optional[SolverConfig] = None, trace: Optional[TextIO] = None) -> SolveReport:
        """
        Solve min ||u||_1 s.t. ||y - Phi u||_{p,w} <= eps

        The weights are folded into the rows once (Phi' = diag(w) Phi,
        y' = diag(w) y) so every dual step projects onto a plain lp ball.

        Args:
            y_center: Dequantized observations, length M
            sensing: Matrix Phi, M x N
            constraint: Exponent, weights and radius of the fidelity ball
            cfg: Iteration settings (defaults from Config)
            trace: Text stream receiving per-iteration CSV rows when cfg.verbose

        Returns:
            SolveReport; a diverging run is returned with diverged=True
        """
        cfg = cfg or SolverConfig()
        y = np.asarray(y_center, dtype=float)
        phi = np.asarray(sensing, dtype=float)
        if phi.ndim != 2 or phi.shape[0] != y.size or constraint.M != y.size:
            raise ShapeError(
                f"Sensing matrix {phi.shape}, observations {y.shape} and "
                f"{constraint.M} weights do not agree"
            )
        p = constraint.p
        w = constraint.weights
        N = phi.shape[1]
        L = w[:, None] * phi
        y_w = w * y

        w_max = float(w.max())
        phi_norm = cls.operator_norm(phi)
        bound = w_max * phi_norm
        if cfg.auto_steps:
            tau = sigma = 0.99 / bound
        else:
            tau, sigma = cfg.step_tau, cfg.step_sigma
            if tau * sigma * bound ** 2 >= 1.0:
                raise DomainError(
                    f"Step sizes violate tau*sigma*||w||_inf^2*||Phi||^2 < 1 "
                    f"({tau * sigma * bound ** 2:.4g})"
                )

        eps = float(constraint.radius)
        if eps == 0.0:
            eps = 1e-12 * float(np.linalg.norm(y_w))

        def residual(u):
            return _lp_norm(y_w - L @ u, p) - constraint.radius

        if _lp_norm(y_w, p) <= eps:
            logger.debug("Zero estimate is feasible; returning it")
            return SolveReport(estimate=np.zeros(N), iterations=0, final_rel_change=0.0,
                               fidelity_residual=residual(np.zeros(N)), objective=0.0,
                               converged=True, tau=tau, sigma=sigma)

        writer = None
        if cfg.verbose:
            writer = csv.writer(trace or sys.stderr)
            writer.writerow(TRACE_HEADER)

        limit = 1e6 * max(float(np.linalg.norm(y_w)), eps) * math.sqrt(N) / bound
        u = np.zeros(N)
        u_bar = np.zeros(N)
        s = np.zeros(y.size)
        lam = 0.0
        rel = math.inf
        settled = diverged = False
        it = 0
        for it in range(1, cfg.max_iters + 1):
            s, lam = cls._prox_dual(s + sigma * (L @ u_bar), sigma, y_w, p, eps,
                                    tol=cfg.projection_tol, max_newton=cfg.projection_max_newton, lam0=lam)
            u_new = cls.soft_threshold(u - tau * (L.T @ s), tau)
            u_bar = u_new + cfg.theta * (u_new - u)
            step = float(np.linalg.norm(u_new - u))
            size = float(np.linalg.norm(u_new))
            rel = step / size if size > 0.0 else math.inf
            u = u_new

            if writer is not None:
                writer.writerow([it, f"{rel:.6e}", f"{residual(u):.6e}", f"{np.abs(u).sum():.6e}"])
            if not np.isfinite(size) or size > limit:
                diverged = True
                logger.warning(f"GBPDN diverged at iteration {it} (||u|| = {size:.3g})")
                break
            if rel < cfg.rel_change_tol:
                settled = True
                break

        rounds = 0
        if not diverged and _lp_norm(y_w - L @ u, p) > eps:
            u, rounds = cls._restore_feasibility(u, L, y_w, p, eps, cfg)
        excess = _lp_norm(y_w - L @ u, p) - eps
        converged = settled and excess <= FEASIBILITY_SLACK * eps
        if settled and not converged:
            logger.warning(f"GBPDN settled outside the fidelity ball (excess {excess:.3g}, eps {eps:.3g})")
        elif not settled and not diverged:
            logger.warning(f"GBPDN stopped at max_iters={cfg.max_iters} (rel change {rel:.3g})")
        return SolveReport(
            estimate=u,
            iterations=it,
            final_rel_change=rel,
            fidelity_residual=residual(u),
            objective=float(np.abs(u).sum()),
            converged=converged,
            diverged=diverged,
            tau=tau,
            sigma=sigma,
            feasibility_rounds=rounds,
        )

    @classmethod
    def _restore_feasibility(cls, u, L, y_w, p, eps, cfg) -> Tuple[np.ndarray, int]:
        """
        Pull u into {||y' - L u||_p <= eps} by minimum-norm corrections

        Each round projects the residual r onto a ball just inside the constraint
        and solves L d = r - proj(r) in the least-squares sense. A full row rank L
        needs one round; otherwise the rounds alternate between the ball and the
        range of L.
        """
        target = eps * (1.0 - FEASIBILITY_MARGIN)
        pinv = np.linalg.pinv(L)
        rounds = 0
        for rounds in range(1, FEASIBILITY_ROUNDS + 1):
            r = y_w - L @ u
            u = u + pinv @ (r - cls.project_lp_ball(r, p, target, tol=cfg.projection_tol,
                                                    max_newton=cfg.projection_max_newton))
            if _lp_norm(y_w - L @ u, p) <= eps:
                break
        logger.debug(f"Feasibility restored in {rounds} round(s)")
        return u, rounds
