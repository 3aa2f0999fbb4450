"""Prediction-correction method.

Predicts with a plain primal-dual step (no linearization in the multiplier
update), then corrects the stacked point through a triangular corrective
matrix with a self-adaptive step size chosen to maximize a quadratic lower
bound on the per-iteration progress.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .problem import (
    BlockMatrix,
    InvalidParameterError,
    IterationRecord,
    IterationTrace,
    PdViolationError,
    PrimalDualPoint,
    ProblemSpec,
    StepDetail,
    SubproblemError,
    default_start,
    kkt_residual,
    project_dual,
    spectral_norm,
)
from .relaxed_ppa import ppa_primal_step, update_r, update_s

__all__ = [
    "PcConfig",
    "predict",
    "build_q",
    "build_m",
    "corrector_sigma",
    "build_g",
    "g_is_pd",
    "optimal_beta",
    "correct",
    "run_pc",
]

_BETA_MARGIN = 1e-9

CORRECTORS = ("upper", "lower")


@dataclass(frozen=True)
class PcConfig:
    """Settings for :func:`run_pc`.

    ``gamma`` scales the self-adaptive step each iteration; the product is
    clamped so the convergence condition on the correction matrix stays
    satisfied. ``corrector`` picks the upper- or lower-triangular corrective
    matrix (the lower one shares its weighting-matrix structure with the
    relaxed solver, making cross-method diagnostics comparable).
    """

    mu1: float = 9.0
    mu2: float = 1.2
    gamma: float = 1.0
    tau: float = 1e-10
    max_iters: int = 100_000
    corrector: str = "lower"
    param_mode: str = "adaptive"
    fixed_r: Optional[float] = None
    fixed_s: Optional[float] = None
    compat_signs: bool = False
    keep_iterates: bool = False
    diagnostics: bool = False

    def validate(self):
        if self.gamma <= 0:
            raise InvalidParameterError("gamma must be positive")
        if self.tau <= 0:
            raise InvalidParameterError("stopping error tau must be positive")
        if self.max_iters < 1:
            raise InvalidParameterError("max_iters must be at least 1")
        if self.corrector not in CORRECTORS:
            raise InvalidParameterError(
                f"corrector must be one of {CORRECTORS}, got {self.corrector!r}"
            )
        if self.param_mode == "adaptive":
            if self.mu1 <= 1 or self.mu2 <= 1:
                raise InvalidParameterError("mu1 and mu2 must be > 1")
        elif self.param_mode == "fixed":
            if self.fixed_r is None or self.fixed_s is None:
                raise InvalidParameterError("fixed mode requires fixed_r and fixed_s")
            if self.fixed_r <= 0 or self.fixed_s <= 0:
                raise InvalidParameterError("fixed_r and fixed_s must be positive")
        else:
            raise InvalidParameterError(f"unknown param_mode {self.param_mode!r}")


def predict(
    p: ProblemSpec,
    w_k: PrimalDualPoint,
    mu1: float,
    mu2: float,
    compat_signs: bool = False,
) -> tuple[PrimalDualPoint, float, float]:
    """One plain primal-dual step with adaptive regularization.

    Solves the regularized primal subproblem, then projects
    ``lam^k + phi(x~)/s`` onto the dual cone; no linearization term appears
    in the multiplier move. Returns the predictor and the (r, s) pair used.
    """
    r = update_r(w_k.x, p, mu1)
    x_tilde = ppa_primal_step(p, w_k, r)
    s = update_s(r, x_tilde, p, mu2)
    lam_hat = w_k.lam + np.asarray(p.constraints(x_tilde), dtype=float) / s
    return PrimalDualPoint(x_tilde, project_dual(lam_hat, compat_signs)), r, s


def build_q(r: float, s: float, jac: np.ndarray) -> BlockMatrix:
    """Upper block-triangular prediction matrix ``[[r I, -J'], [0, s I]]``."""
    if r <= 0 or s <= 0:
        raise InvalidParameterError("r and s must be positive")
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    m, n = jac.shape
    return BlockMatrix(r * np.eye(n), -jac.T, np.zeros((m, n)), s * np.eye(m))


def build_m(choice: str, r: float, s: float, jac: np.ndarray) -> BlockMatrix:
    """Corrective matrix: ``[[I, -J'/r], [0, I]]`` or ``[[I, 0], [J/s, I]]``."""
    if r <= 0 or s <= 0:
        raise InvalidParameterError("r and s must be positive")
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    m, n = jac.shape
    if choice == "upper":
        return BlockMatrix(np.eye(n), -jac.T / r, np.zeros((m, n)), np.eye(m))
    if choice == "lower":
        return BlockMatrix(np.eye(n), np.zeros((n, m)), jac / s, np.eye(m))
    raise InvalidParameterError(f"corrector must be one of {CORRECTORS}, got {choice!r}")


def corrector_sigma(choice: str, r: float, s: float, jac: np.ndarray) -> BlockMatrix:
    """Weighting matrix ``Q M^{-1}`` for the chosen corrector, in closed form.

    Upper choice gives the diagonal ``diag(r I, s I)``; lower gives
    ``[[r I + J'J/s, -J'], [-J, s I]]``. Both are positive definite for any
    positive (r, s).
    """
    if r <= 0 or s <= 0:
        raise InvalidParameterError("r and s must be positive")
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    m, n = jac.shape
    if choice == "upper":
        return BlockMatrix(r * np.eye(n), np.zeros((n, m)), np.zeros((m, n)), s * np.eye(m))
    if choice == "lower":
        return BlockMatrix(
            r * np.eye(n) + jac.T @ jac / s, -jac.T, -jac, s * np.eye(m)
        )
    raise InvalidParameterError(f"corrector must be one of {CORRECTORS}, got {choice!r}")


def build_g(
    q: BlockMatrix, m_mat: BlockMatrix, sigma: BlockMatrix, beta: float
) -> BlockMatrix:
    """Convergence-condition matrix ``Q' + Q - beta M' S M``."""
    qd = q.dense()
    md = m_mat.dense()
    g = qd.T + qd - beta * md.T @ sigma.dense() @ md
    n = q.n
    return BlockMatrix(g[:n, :n], g[:n, n:], g[n:, :n], g[n:, n:])


def g_is_pd(r: float, s: float, jac: np.ndarray, beta: float) -> bool:
    """Positive definiteness of the convergence-condition matrix.

    For both corrector choices this reduces to ``(2 - beta)^2 r s > ||J||^2``
    together with ``0 < beta < 2``.
    """
    if r <= 0 or s <= 0:
        raise InvalidParameterError("r and s must be positive")
    if not 0.0 < beta < 2.0:
        return False
    return (2.0 - beta) ** 2 * r * s > spectral_norm(jac) ** 2


def optimal_beta(
    w_k: PrimalDualPoint,
    w_tilde: PrimalDualPoint,
    q: BlockMatrix,
    m_mat: BlockMatrix,
    sigma: BlockMatrix,
) -> Optional[float]:
    """Step size maximizing the quadratic progress lower bound.

    With ``d = w^k - w~`` this is ``d'Qd / ||M d||_S^2``. Returns None when
    the displacement is zero (the iteration has converged); raises when the
    denominator fails to be positive, which signals a weighting matrix that
    is not positive definite on the move.
    """
    d = w_k.w - w_tilde.w
    if not np.any(d):
        return None
    num = float(d @ q.matvec(d))
    den = sigma.quad(m_mat.matvec(d))
    if den <= 0.0:
        raise PdViolationError(
            f"corrected-move quadratic form is nonpositive ({den:.3e})"
        )
    return num / den


def correct(
    w_k: PrimalDualPoint,
    w_tilde: PrimalDualPoint,
    m_mat: BlockMatrix,
    beta: float,
    reproject: bool = True,
    compat_signs: bool = False,
) -> PrimalDualPoint:
    """Corrected point ``w^k - beta M (w^k - w~)``.

    The multiplier block is re-projected onto the dual cone afterwards unless
    ``reproject`` is disabled (safe for affine constraints).
    """
    if beta <= 0:
        raise InvalidParameterError("beta must be positive")
    w_next = w_k.w - beta * m_mat.matvec(w_k.w - w_tilde.w)
    n = w_k.x.shape[0]
    lam = w_next[n:]
    if reproject:
        lam = project_dual(lam, compat_signs)
    return PrimalDualPoint(w_next[:n], lam)


def _sigma_quad(choice, r, s, jac, vx, vl):
    """Quadratic form of the corrector-consistent weighting matrix."""
    if choice == "upper":
        return r * (vx @ vx) + s * (vl @ vl)
    jv = jac @ vx
    return r * (vx @ vx) + (jv @ jv) / s - 2.0 * (vl @ jv) + s * (vl @ vl)


def _beta_cap(param_mode: str, mu2: float, r: float, s: float, jac_norm: float) -> float:
    if param_mode == "adaptive":
        return 2.0 - math.sqrt(1.0 / mu2) - _BETA_MARGIN
    cap = 2.0 - jac_norm / math.sqrt(r * s) - _BETA_MARGIN
    if cap <= 0:
        raise InvalidParameterError(
            "fixed (r, s) too small against the Jacobian norm; no admissible "
            "correction step exists"
        )
    return cap


def run_pc(
    p: ProblemSpec,
    cfg: PcConfig,
    w0: Optional[PrimalDualPoint] = None,
) -> tuple[PrimalDualPoint, IterationTrace]:
    """Run the prediction-correction iteration until the objective settles.

    Per iteration: predict with the plain primal-dual step, build the
    prediction/corrective matrices, compute the self-adaptive step size and
    clamp ``beta = gamma * beta*`` so the convergence condition holds, then
    correct. Stopping and trace semantics match :func:`run_relaxed_ppa`.
    """
    cfg.validate()
    if w0 is None:
        w0 = default_start(p, cfg.compat_signs)
    p.check_point(w0)
    if not cfg.compat_signs and not w0.in_cone():
        raise InvalidParameterError("initial multiplier must lie in the dual cone")

    f_prev = float(p.objective(w0.x))
    trace = IterationTrace(method="pc", param_mode=cfg.param_mode, f_initial=f_prev)
    if cfg.keep_iterates:
        trace.x_iterates = [w0.x.copy()]
    if cfg.diagnostics:
        trace.details = []

    reproject = not p.linear_constraints
    w = w0
    error = math.inf
    k = 0
    while error >= cfg.tau and k < cfg.max_iters:
        if cfg.param_mode == "adaptive":
            r = update_r(w.x, p, cfg.mu1, jac_norm=spectral_norm(p.jacobian(w.x)))
        else:
            r = cfg.fixed_r

        t0 = time.perf_counter()
        try:
            x_tilde = ppa_primal_step(p, w, r)
        except SubproblemError as exc:
            raise SubproblemError(f"iteration {k}: {exc}") from exc
        sub_time = time.perf_counter() - t0

        jac_tilde = np.asarray(p.jacobian(x_tilde), dtype=float)
        phi_tilde = np.asarray(p.constraints(x_tilde), dtype=float)
        jac_norm = spectral_norm(jac_tilde)
        if cfg.param_mode == "adaptive":
            s = update_s(r, x_tilde, p, cfg.mu2, jac_norm=jac_norm)
        else:
            s = cfg.fixed_s

        lam_tilde = project_dual(w.lam + phi_tilde / s, cfg.compat_signs)
        w_tilde = PrimalDualPoint(x_tilde, lam_tilde)

        dx = w.x - x_tilde
        dl = w.lam - lam_tilde
        if not (np.any(dx) or np.any(dl)):
            # fixed point of the prediction: already optimal
            beta_star = 0.0
            beta = 0.0
            w_next_raw = w
            w_next = w
        else:
            num = r * (dx @ dx) - dx @ (jac_tilde.T @ dl) + s * (dl @ dl)
            if cfg.corrector == "upper":
                mdx = dx - jac_tilde.T @ dl / r
                mdl = dl
            else:
                mdx = dx
                mdl = jac_tilde @ dx / s + dl
            den = _sigma_quad(cfg.corrector, r, s, jac_tilde, mdx, mdl)
            if den <= 0.0:
                raise PdViolationError(
                    f"iteration {k}: corrected-move quadratic form is nonpositive"
                )
            beta_star = num / den
            if beta_star <= 0.0:
                raise PdViolationError(
                    f"iteration {k}: nonpositive step size bound; (r, s) do not "
                    "dominate the Jacobian norm"
                )
            beta = min(
                cfg.gamma * beta_star,
                _beta_cap(cfg.param_mode, cfg.mu2, r, s, jac_norm),
            )
            x_next = w.x - beta * mdx
            lam_next_raw = w.lam - beta * mdl
            w_next_raw = PrimalDualPoint(x_next, lam_next_raw)
            if reproject:
                w_next = PrimalDualPoint(
                    x_next, project_dual(lam_next_raw, cfg.compat_signs)
                )
            else:
                w_next = w_next_raw

        f_next = float(p.objective(w_next.x))
        error = abs(f_prev - f_next)

        dxs = x_tilde - w.x
        dls = lam_tilde - w.lam
        step_sq = _sigma_quad(cfg.corrector, r, s, jac_tilde, dxs, dls)
        trace.add_predictor(w_tilde)
        trace.records.append(
            IterationRecord(
                k=k,
                f_value=f_next,
                error=error,
                kkt_residual=kkt_residual(p, w_next),
                r=r,
                s=s,
                step_scale=beta,
                step_norm=math.sqrt(max(step_sq, 0.0)),
                beta_star=beta_star,
                g_is_pd=g_is_pd(r, s, jac_tilde, beta) if beta > 0 else None,
            )
        )
        trace.subproblem_times.append(sub_time)
        if cfg.keep_iterates:
            trace.x_iterates.append(w_next.x.copy())
        if cfg.diagnostics:
            trace.details.append(
                StepDetail(
                    k=k,
                    w=w,
                    w_tilde=w_tilde,
                    w_next_raw=w_next_raw,
                    r=r,
                    s=s,
                    jacobian=jac_tilde,
                    step_scale=beta,
                    beta_star=beta_star,
                    corrector=cfg.corrector,
                )
            )

        w = w_next
        f_prev = f_next
        k += 1

    trace.converged = error < cfg.tau
    final = PrimalDualPoint(w.x, project_dual(w.lam, cfg.compat_signs))
    return final, trace
