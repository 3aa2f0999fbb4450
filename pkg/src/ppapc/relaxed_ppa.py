"""Relaxed customized proximal point iteration.

Each iteration solves the regularized primal subproblem, takes a linearized
projected multiplier step, and applies an over/under-relaxation to the
stacked point. Regularization pairs (r, s) are chosen adaptively from the
constraint Jacobian norm by default; a decreasing schedule and a constant
mode are available as alternatives.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .problem import (
    REG_FLOOR,
    InvalidParameterError,
    IterationRecord,
    IterationTrace,
    PrimalDualPoint,
    ProblemSpec,
    StepDetail,
    SubproblemError,
    default_start,
    kkt_residual,
    project_dual,
    spectral_norm,
)

__all__ = [
    "RelaxedPpaConfig",
    "update_r",
    "update_s",
    "ppa_primal_step",
    "ppa_dual_step",
    "relax_step",
    "schedule_rk",
    "run_relaxed_ppa",
]

_ZERO_JAC_TOL = 1e-12


@dataclass(frozen=True)
class RelaxedPpaConfig:
    """Settings for :func:`run_relaxed_ppa`.

    ``param_mode`` selects how the per-iteration regularization pair is
    produced: ``adaptive`` scales with the Jacobian norm, ``schedule`` uses
    the decreasing sequence built from the constants (L, c1, c2, sigma) over
    a fixed horizon, and ``fixed`` keeps (fixed_r, fixed_s) constant (the
    regime in which the ergodic rate bound applies to linear constraints).
    """

    mu1: float = 9.0
    mu2: float = 1.2
    gamma: float = 1.0
    tau: float = 1e-10
    max_iters: int = 100_000
    param_mode: str = "adaptive"
    L: Optional[float] = None
    c1: Optional[float] = None
    c2: Optional[float] = None
    sigma: Optional[float] = None
    horizon: Optional[int] = None
    fixed_r: Optional[float] = None
    fixed_s: Optional[float] = None
    compat_signs: bool = False
    keep_iterates: bool = False
    diagnostics: bool = False

    def validate(self):
        if not 0.0 < self.gamma < 2.0:
            raise InvalidParameterError("gamma must lie in (0, 2)")
        if self.tau <= 0:
            raise InvalidParameterError("stopping error tau must be positive")
        if self.max_iters < 1:
            raise InvalidParameterError("max_iters must be at least 1")
        if self.param_mode == "adaptive":
            if self.mu1 <= 1 or self.mu2 <= 1:
                raise InvalidParameterError("mu1 and mu2 must be > 1")
        elif self.param_mode == "schedule":
            for name in ("L", "c1", "c2", "sigma"):
                val = getattr(self, name)
                if val is None or val <= 0:
                    raise InvalidParameterError(
                        f"schedule mode requires {name} > 0"
                    )
            if self.horizon is None or self.horizon < 0:
                raise InvalidParameterError("schedule mode requires a horizon >= 0")
        elif self.param_mode == "fixed":
            if self.fixed_r is None or self.fixed_s is None:
                raise InvalidParameterError("fixed mode requires fixed_r and fixed_s")
            if self.fixed_r <= 0 or self.fixed_s <= 0:
                raise InvalidParameterError("fixed_r and fixed_s must be positive")
        else:
            raise InvalidParameterError(f"unknown param_mode {self.param_mode!r}")


def update_r(
    x_k: np.ndarray, p: ProblemSpec, mu1: float, jac_norm: Optional[float] = None
) -> float:
    """Adaptive primal regularization: Jacobian norm at x^k over mu1.

    Falls back to a small positive floor when the Jacobian vanishes, so the
    prox subproblem stays well posed.
    """
    if mu1 <= 1:
        raise InvalidParameterError("mu1 must be > 1")
    if jac_norm is None:
        jac_norm = spectral_norm(p.jacobian(x_k))
    if jac_norm < _ZERO_JAC_TOL:
        return REG_FLOOR
    return jac_norm / mu1


def update_s(
    r_k: float,
    x_tilde: np.ndarray,
    p: ProblemSpec,
    mu2: float,
    jac_norm: Optional[float] = None,
) -> float:
    """Adaptive dual regularization: mu2 times squared Jacobian norm over r.

    The product ``r_k * s_k = mu2 * ||J||^2`` then exceeds ``||J||^2``, which
    keeps the symmetric proximal weighting matrix positive definite whenever
    the Jacobian is nonzero.
    """
    if r_k <= 0:
        raise InvalidParameterError("r_k must be positive")
    if mu2 <= 1:
        raise InvalidParameterError("mu2 must be > 1")
    if jac_norm is None:
        jac_norm = spectral_norm(p.jacobian(x_tilde))
    if jac_norm < _ZERO_JAC_TOL:
        return REG_FLOOR
    return mu2 * jac_norm**2 / r_k


def ppa_primal_step(p: ProblemSpec, w_k: PrimalDualPoint, r_k: float) -> np.ndarray:
    """Solve the regularized primal subproblem anchored at x^k."""
    if r_k <= 0:
        raise InvalidParameterError("r_k must be positive")
    return np.asarray(p.prox_solver(w_k.lam, w_k.x, r_k), dtype=float)


def ppa_dual_step(
    p: ProblemSpec,
    w_k: PrimalDualPoint,
    x_tilde: np.ndarray,
    s_k: float,
    compat_signs: bool = False,
    phi_tilde: Optional[np.ndarray] = None,
    jac_tilde: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Projected multiplier step with the linearized constraint correction.

    Moves the multiplier along ``phi(x~) + J(x~)(x~ - x^k)`` scaled by 1/s and
    projects onto the dual cone. The linearization term is what distinguishes
    this update from the plain prediction step. Precomputed constraint values
    or Jacobian may be passed to avoid re-evaluation.
    """
    if s_k <= 0:
        raise InvalidParameterError("s_k must be positive")
    if phi_tilde is None:
        phi_tilde = np.asarray(p.constraints(x_tilde), dtype=float)
    if jac_tilde is None:
        jac_tilde = np.asarray(p.jacobian(x_tilde), dtype=float)
    lam_hat = w_k.lam + (phi_tilde + jac_tilde @ (x_tilde - w_k.x)) / s_k
    return project_dual(lam_hat, compat_signs)


def relax_step(
    w_k: PrimalDualPoint, w_tilde: PrimalDualPoint, gamma: float
) -> PrimalDualPoint:
    """Relaxed update ``w^{k+1} = w^k - gamma (w^k - w~)``; gamma = 1 returns w~."""
    if not 0.0 < gamma < 2.0:
        raise InvalidParameterError("gamma must lie in (0, 2)")
    return PrimalDualPoint(
        w_k.x - gamma * (w_k.x - w_tilde.x),
        w_k.lam - gamma * (w_k.lam - w_tilde.lam),
    )


def schedule_rk(k: int, cfg: RelaxedPpaConfig) -> float:
    """Decreasing regularization sequence over a fixed horizon.

    ``r_k = (horizon - k) sqrt(L c2 + sigma) + L c1 + sigma``; linear in k,
    ending at ``L c1 + sigma`` when k equals the horizon.
    """
    if cfg.param_mode != "schedule":
        raise InvalidParameterError("config is not in schedule mode")
    if cfg.horizon is None:
        raise InvalidParameterError("schedule mode requires a horizon")
    if k < 0 or k > cfg.horizon:
        raise InvalidParameterError(
            f"iteration {k} outside schedule horizon {cfg.horizon}"
        )
    return (cfg.horizon - k) * math.sqrt(cfg.L * cfg.c2 + cfg.sigma) + (
        cfg.L * cfg.c1 + cfg.sigma
    )


def run_relaxed_ppa(
    p: ProblemSpec,
    cfg: RelaxedPpaConfig,
    w0: Optional[PrimalDualPoint] = None,
) -> tuple[PrimalDualPoint, IterationTrace]:
    """Run the relaxed proximal point iteration until the objective settles.

    Stops when the absolute objective change between consecutive outer
    iterates drops below ``cfg.tau`` or ``cfg.max_iters`` is hit (the trace
    then carries ``converged=False``). Returns the final point (multiplier
    projected back onto the cone) and the per-iteration trace.

    After an over-relaxed step (gamma > 1) the multiplier may leave the dual
    cone; it is re-projected so the next subproblem stays convex, except for
    affine constraints where any multiplier sign is safe and skipping the
    projection preserves the exact telescoping of the rate analysis.
    """
    cfg.validate()
    if w0 is None:
        w0 = default_start(p, cfg.compat_signs)
    p.check_point(w0)
    if not cfg.compat_signs and not w0.in_cone():
        raise InvalidParameterError("initial multiplier must lie in the dual cone")

    f_prev = float(p.objective(w0.x))
    trace = IterationTrace(
        method="rppa", param_mode=cfg.param_mode, f_initial=f_prev
    )
    if cfg.keep_iterates:
        trace.x_iterates = [w0.x.copy()]
    if cfg.diagnostics:
        trace.details = []

    max_iters = cfg.max_iters
    if cfg.param_mode == "schedule":
        max_iters = min(max_iters, cfg.horizon + 1)

    reproject = not p.linear_constraints
    w = w0
    error = math.inf
    k = 0
    while error >= cfg.tau and k < max_iters:
        if cfg.param_mode == "adaptive":
            r = update_r(w.x, p, cfg.mu1, jac_norm=spectral_norm(p.jacobian(w.x)))
        elif cfg.param_mode == "schedule":
            r = schedule_rk(k, cfg)
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
        elif cfg.param_mode == "schedule":
            s = r
        else:
            s = cfg.fixed_s

        lam_tilde = ppa_dual_step(
            p, w, x_tilde, s, cfg.compat_signs, phi_tilde=phi_tilde, jac_tilde=jac_tilde
        )
        w_tilde = PrimalDualPoint(x_tilde, lam_tilde)

        w_next_raw = relax_step(w, w_tilde, cfg.gamma)
        if reproject and cfg.gamma > 1.0:
            w_next = PrimalDualPoint(
                w_next_raw.x, project_dual(w_next_raw.lam, cfg.compat_signs)
            )
        else:
            w_next = w_next_raw

        f_next = float(p.objective(w_next.x))
        error = abs(f_prev - f_next)

        dx = x_tilde - w.x
        dl = lam_tilde - w.lam
        step_sq = r * (dx @ dx) - 2.0 * (dl @ (jac_tilde @ dx)) + s * (dl @ dl)
        trace.add_predictor(w_tilde)
        trace.records.append(
            IterationRecord(
                k=k,
                f_value=f_next,
                error=error,
                kkt_residual=kkt_residual(p, w_next),
                r=r,
                s=s,
                step_scale=cfg.gamma,
                step_norm=math.sqrt(max(step_sq, 0.0)),
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
                    step_scale=cfg.gamma,
                )
            )

        w = w_next
        f_prev = f_next
        k += 1

    trace.converged = error < cfg.tau
    final = PrimalDualPoint(w.x, project_dual(w.lam, cfg.compat_signs))
    return final, trace
