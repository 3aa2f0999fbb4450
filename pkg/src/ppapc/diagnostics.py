"""Machine checks of the solvers' theoretical guarantees.

Contraction of the iterates in the weighted norm, the O(1/t) ergodic gap
bound, and monotonicity of the primal-dual operator are evaluated on recorded
traces (history retention must be enabled on the run). All checks are pure
functions of trace plus ground truth; rerunning them yields identical
reports.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .pc import build_g, build_m, build_q, corrector_sigma
from .problem import (
    InvalidParameterError,
    IterationTrace,
    PrimalDualPoint,
    ProblemSpec,
    build_sigma,
    monotone_operator,
)

__all__ = [
    "ContractionReport",
    "MonotoneReport",
    "GapPoint",
    "check_ppa_contraction",
    "check_pc_contraction",
    "check_ergodic_gap",
    "check_monotone",
    "write_gap_series",
]


@dataclass
class ContractionReport:
    """Per-iteration comparison of both sides of a contraction inequality."""

    method: str
    lhs: np.ndarray
    rhs: np.ndarray
    slack: np.ndarray
    sigma_min_eigs: np.ndarray
    g_min_eigs: Optional[np.ndarray] = None

    @property
    def iterations(self) -> int:
        return len(self.lhs)

    @property
    def excess(self) -> np.ndarray:
        return self.lhs - self.rhs - self.slack

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(self.excess > 0))

    @property
    def max_violation(self) -> float:
        return float(np.max(self.excess, initial=-np.inf))

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_json(self, path) -> None:
        doc = {
            "method": self.method,
            "iterations": self.iterations,
            "violations": self.violations,
            "max_violation": self.max_violation,
            "passed": self.passed,
            "sigma_min_eig": float(np.min(self.sigma_min_eigs, initial=np.inf)),
            "g_min_eig": (
                float(np.min(self.g_min_eigs, initial=np.inf))
                if self.g_min_eigs is not None
                else None
            ),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["k", "lhs", "rhs", "slack", "sigma_min_eig"]
            if self.g_min_eigs is not None:
                header.append("g_min_eig")
            writer.writerow(header)
            for k in range(self.iterations):
                row = [
                    k,
                    repr(float(self.lhs[k])),
                    repr(float(self.rhs[k])),
                    repr(float(self.slack[k])),
                    repr(float(self.sigma_min_eigs[k])),
                ]
                if self.g_min_eigs is not None:
                    row.append(repr(float(self.g_min_eigs[k])))
                writer.writerow(row)


@dataclass
class MonotoneReport:
    """Worst sampled value of the operator monotonicity form."""

    worst: float
    scale: float
    samples: int

    def passed(self, tol: float = 1e-10) -> bool:
        return self.worst >= -tol * self.scale


@dataclass(frozen=True)
class GapPoint:
    t: int
    gap: float
    bound: float


def _require_details(trace: IterationTrace):
    if trace.details is None or not trace.details:
        raise InvalidParameterError(
            "trace carries no per-iteration history; rerun with diagnostics enabled"
        )


def check_ppa_contraction(
    trace: IterationTrace, w_star: PrimalDualPoint, slack_rel: float = 1e-8
) -> ContractionReport:
    """Verify the relaxed-solver contraction inequality against ground truth.

    For every iteration the squared weighted distance of the relaxed point to
    the optimum must not exceed the previous distance minus
    ``gamma (2 - gamma)`` times the squared predictor displacement, all in the
    weighting matrix built from that iteration's (r, s, Jacobian). The raw
    relaxed point (before any cone re-projection) is the quantity the
    inequality governs, so that is what gets checked.
    """
    _require_details(trace)
    ws = w_star.w
    lhs, rhs, slack, eigs = [], [], [], []
    for det in trace.details:
        sigma = build_sigma(det.r, det.s, det.jacobian)
        gamma = det.step_scale
        lhs_k = sigma.quad(det.w_next_raw.w - ws)
        rhs_k = sigma.quad(det.w.w - ws) - gamma * (2.0 - gamma) * sigma.quad(
            det.w_tilde.w - det.w.w
        )
        lhs.append(lhs_k)
        rhs.append(rhs_k)
        slack.append(slack_rel * (1.0 + abs(rhs_k)))
        eigs.append(sigma.min_eigenvalue())
    return ContractionReport(
        method="rppa",
        lhs=np.array(lhs),
        rhs=np.array(rhs),
        slack=np.array(slack),
        sigma_min_eigs=np.array(eigs),
    )


def check_pc_contraction(
    trace: IterationTrace, w_star: PrimalDualPoint, slack_rel: float = 1e-8
) -> ContractionReport:
    """Verify the corrector contraction inequality against ground truth.

    Uses the corrector-consistent weighting matrix and the convergence
    matrix of each iteration; the drop must be at least ``beta`` times the
    squared displacement in the convergence-matrix norm.
    """
    _require_details(trace)
    ws = w_star.w
    lhs, rhs, slack, eigs, geigs = [], [], [], [], []
    for det in trace.details:
        sigma = corrector_sigma(det.corrector, det.r, det.s, det.jacobian)
        beta = det.step_scale
        g = build_g(
            build_q(det.r, det.s, det.jacobian),
            build_m(det.corrector, det.r, det.s, det.jacobian),
            sigma,
            beta,
        )
        d = det.w.w - det.w_tilde.w
        lhs_k = sigma.quad(ws - det.w_next_raw.w)
        rhs_k = sigma.quad(ws - det.w.w) - beta * g.quad(d)
        lhs.append(lhs_k)
        rhs.append(rhs_k)
        slack.append(slack_rel * (1.0 + abs(rhs_k)))
        eigs.append(sigma.min_eigenvalue())
        geigs.append(g.min_eigenvalue())
    return ContractionReport(
        method="pc",
        lhs=np.array(lhs),
        rhs=np.array(rhs),
        slack=np.array(slack),
        sigma_min_eigs=np.array(eigs),
        g_min_eigs=np.array(geigs),
    )


def _jacobian_constant(trace: IterationTrace) -> bool:
    ref = trace.details[0].jacobian
    scale = 1.0 + float(np.max(np.abs(ref), initial=0.0))
    for det in trace.details[1:]:
        if np.max(np.abs(det.jacobian - ref), initial=0.0) > 1e-12 * scale:
            return False
    return True


def check_ergodic_gap(
    trace: IterationTrace,
    w_star: PrimalDualPoint,
    mode: str,
    p: ProblemSpec,
) -> list[GapPoint]:
    """Ergodic optimality gap of the predictor averages against the 1/t bound.

    The gap at horizon t is ``f(x_avg) - f(x*) + (w_avg - w*)' Gamma(w*)``
    with the running predictor means; the bound is the squared weighted
    distance of the optimum to the start over ``2 c (1+t)``, where c is the
    relaxation factor (relaxed solver) or the smallest correction step used.

    Only valid where the weighting matrices are nonincreasing: a constant
    Jacobian with constant (r, s), or the decreasing schedule. Adaptive
    parameters with a varying Jacobian are refused.
    """
    _require_details(trace)
    if mode not in ("ppa", "pc"):
        raise InvalidParameterError("mode must be 'ppa' or 'pc'")
    if (mode == "pc") != (trace.method == "pc"):
        raise InvalidParameterError(
            f"mode {mode!r} does not match the trace's method {trace.method!r}"
        )
    if trace.param_mode != "schedule" and not _jacobian_constant(trace):
        raise InvalidParameterError(
            "ergodic bound not guaranteed: the Jacobian varies across "
            "iterations and the regularization pair is not the decreasing "
            "schedule, so the weighting matrices need not telescope"
        )

    first = trace.details[0]
    if mode == "ppa":
        sigma0 = build_sigma(first.r, first.s, first.jacobian)
        scale = first.step_scale
    else:
        sigma0 = corrector_sigma(first.corrector, first.r, first.s, first.jacobian)
        scale = min(det.step_scale for det in trace.details)
        if scale <= 0:
            raise InvalidParameterError("nonpositive correction step recorded")

    w0 = first.w
    dist0 = sigma0.quad(w_star.w - w0.w)
    gamma_w = monotone_operator(p, w_star)
    f_star = float(p.objective(w_star.x))
    ws = w_star.w

    out = []
    x_sum = np.zeros_like(w_star.x)
    lam_sum = np.zeros_like(w_star.lam)
    for t, det in enumerate(trace.details):
        x_sum += det.w_tilde.x
        lam_sum += det.w_tilde.lam
        count = t + 1
        x_avg = x_sum / count
        w_avg = np.concatenate([x_avg, lam_sum / count])
        gap = float(p.objective(x_avg)) - f_star + float((w_avg - ws) @ gamma_w)
        bound = dist0 / (2.0 * scale * count)
        out.append(GapPoint(t=t, gap=gap, bound=bound))
    return out


def write_gap_series(series: list[GapPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "gap", "bound"])
        for pt in series:
            writer.writerow([pt.t, repr(pt.gap), repr(pt.bound)])


def check_monotone(
    p: ProblemSpec, samples: int, seed: int, box: float = 2.0
) -> MonotoneReport:
    """Sample the monotonicity form of the primal-dual operator.

    Draws pairs of points with multipliers in the dual cone and records the
    most negative value of ``(w - w~)' [Gamma(w) - Gamma(w~)]``; the scale is
    one plus the largest magnitude seen, for use in relative pass criteria.
    """
    rng = np.random.default_rng(seed)
    worst = np.inf
    scale = 1.0
    for _ in range(samples):
        x1 = rng.uniform(-box, box, p.n)
        x2 = rng.uniform(-box, box, p.n)
        l1 = rng.uniform(0.0, box, p.m)
        l2 = rng.uniform(0.0, box, p.m)
        w1 = PrimalDualPoint(x1, l1)
        w2 = PrimalDualPoint(x2, l2)
        diff = w1.w - w2.w
        form = float(diff @ (monotone_operator(p, w1) - monotone_operator(p, w2)))
        worst = min(worst, form)
        scale = max(scale, 1.0 + abs(form))
    return MonotoneReport(worst=worst, scale=scale, samples=samples)
