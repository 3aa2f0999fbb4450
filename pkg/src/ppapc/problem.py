"""Core types and operations shared by both solvers.

Defines the problem container, the stacked primal-dual point, the 2x2 block
matrices used as iteration metrics, KKT residuals, and the small pieces of
dense linear algebra (spectral norm, weighted norms, positive-definiteness
tests) that the solver loops rely on.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "DimensionMismatchError",
    "InvalidParameterError",
    "PdViolationError",
    "SubproblemError",
    "ProblemSpec",
    "PrimalDualPoint",
    "BlockMatrix",
    "ProxParams",
    "IterationRecord",
    "StepDetail",
    "IterationTrace",
    "project_dual",
    "lagrangian_value",
    "monotone_operator",
    "kkt_residual",
    "build_sigma",
    "sigma_is_pd",
    "sigma_norm",
    "spectral_norm",
    "ergodic_average",
    "finite_difference_jacobian",
    "prox_optimality_gap",
    "default_start",
]

# Degenerate regularization floor: keeps prox subproblems well posed when the
# constraint Jacobian (numerically) vanishes.
REG_FLOOR = 1e-6


class DimensionMismatchError(ValueError):
    """Input arrays are inconsistent with the problem dimensions."""


class InvalidParameterError(ValueError):
    """A solver or matrix parameter violates its admissible range."""


class PdViolationError(RuntimeError):
    """A quantity that must be positive (definite) was not."""


class SubproblemError(RuntimeError):
    """An inner subproblem solve failed."""


def project_dual(lam: np.ndarray, compat_signs: bool = False) -> np.ndarray:
    """Project a multiplier vector onto the dual cone.

    Canonically the cone is the nonnegative orthant. With ``compat_signs``
    the projection goes onto the nonpositive orthant instead, reproducing the
    sign-flipped multiplier updates of the reference QCQP experiment setup.
    """
    lam = np.asarray(lam, dtype=float)
    if compat_signs:
        return np.minimum(lam, 0.0)
    return np.maximum(lam, 0.0)


@dataclass(frozen=True)
class PrimalDualPoint:
    """Stacked iterate ``w = (x, lam)`` with the multiplier in the dual cone."""

    x: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=float))

    @property
    def w(self) -> np.ndarray:
        """The stacked vector of length n + m."""
        return np.concatenate([self.x, self.lam])

    @classmethod
    def from_w(cls, w: np.ndarray, n: int) -> "PrimalDualPoint":
        w = np.asarray(w, dtype=float)
        return cls(w[:n], w[n:])

    def in_cone(self, tol: float = 0.0) -> bool:
        return bool(self.lam.size == 0 or np.min(self.lam) >= -tol)


@dataclass(frozen=True)
class BlockMatrix:
    """A 2x2 block matrix over the (n, m) primal/dual split.

    Used for every structured matrix in the iteration analysis; block
    operations avoid materializing the dense (n+m)^2 product where possible.
    """

    top_left: np.ndarray
    top_right: np.ndarray
    bottom_left: np.ndarray
    bottom_right: np.ndarray

    def __post_init__(self):
        tl = np.atleast_2d(np.asarray(self.top_left, dtype=float))
        tr = np.atleast_2d(np.asarray(self.top_right, dtype=float))
        bl = np.atleast_2d(np.asarray(self.bottom_left, dtype=float))
        br = np.atleast_2d(np.asarray(self.bottom_right, dtype=float))
        n = tl.shape[0]
        m = br.shape[0]
        if tl.shape != (n, n) or br.shape != (m, m):
            raise DimensionMismatchError("diagonal blocks must be square")
        if tr.shape != (n, m) or bl.shape != (m, n):
            raise DimensionMismatchError(
                f"off-diagonal blocks must be {n}x{m} and {m}x{n}, "
                f"got {tr.shape} and {bl.shape}"
            )
        object.__setattr__(self, "top_left", tl)
        object.__setattr__(self, "top_right", tr)
        object.__setattr__(self, "bottom_left", bl)
        object.__setattr__(self, "bottom_right", br)

    @property
    def n(self) -> int:
        return self.top_left.shape[0]

    @property
    def m(self) -> int:
        return self.bottom_right.shape[0]

    def is_symmetric(self, tol: float = 0.0) -> bool:
        return (
            np.allclose(self.top_left, self.top_left.T, atol=tol, rtol=0)
            and np.allclose(self.bottom_right, self.bottom_right.T, atol=tol, rtol=0)
            and np.allclose(self.top_right, self.bottom_left.T, atol=tol, rtol=0)
        )

    def dense(self) -> np.ndarray:
        return np.block(
            [
                [self.top_left, self.top_right],
                [self.bottom_left, self.bottom_right],
            ]
        )

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n + self.m,):
            raise DimensionMismatchError(
                f"expected vector of length {self.n + self.m}, got {v.shape}"
            )
        vx, vl = v[: self.n], v[self.n :]
        top = self.top_left @ vx + self.top_right @ vl
        bottom = self.bottom_left @ vx + self.bottom_right @ vl
        return np.concatenate([top, bottom])

    def quad(self, v: np.ndarray) -> float:
        """Evaluate ``v' A v`` blockwise."""
        v = np.asarray(v, dtype=float)
        vx, vl = v[: self.n], v[self.n :]
        return float(
            vx @ (self.top_left @ vx)
            + vx @ (self.top_right @ vl)
            + vl @ (self.bottom_left @ vx)
            + vl @ (self.bottom_right @ vl)
        )

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.dense() + self.dense().T))[0])


@dataclass(frozen=True)
class ProxParams:
    """Per-iteration regularization pair plus the tuning factors."""

    r: float
    s: float
    mu1: float = 9.0
    mu2: float = 1.2
    gamma: float = 1.0
    beta: float = 0.0

    def validate(self, relaxed: bool = False):
        if self.r <= 0 or self.s <= 0:
            raise InvalidParameterError("regularization factors r, s must be > 0")
        if self.mu1 <= 1 or self.mu2 <= 1:
            raise InvalidParameterError("factors mu1, mu2 must be > 1")
        if relaxed and not 0.0 < self.gamma < 2.0:
            raise InvalidParameterError("relaxation gamma must lie in (0, 2)")


@dataclass(frozen=True)
class ProblemSpec:
    """A convex program with smooth inequality constraints.

    Parameters
    ----------
    n, m : int
        Primal dimension and number of inequality constraints.
    objective : callable
        ``x -> f(x)``; convex, not necessarily smooth.
    constraints : callable
        ``x -> phi(x)``, vector of the m constraint values (feasible means
        ``phi(x) <= 0`` componentwise).
    jacobian : callable
        ``x -> J(x)`` of shape (m, n); row i is the gradient of constraint i.
    prox_solver : callable
        ``(lam, x_anchor, r) -> x`` minimizing
        ``f(x) + lam' phi(x) + (r/2) ||x - x_anchor||^2`` over the primal set.
    project_x : callable, optional
        Projection onto the primal feasible set; identity for the whole space.
    gradient : callable, optional
        ``x -> grad f(x)`` when f is smooth; enables the stationarity term of
        the KKT residual.
    x0 : ndarray, optional
        Preferred starting primal point (e.g. an unconstrained minimizer).
    linear_constraints : bool
        True when phi is affine; lets the solvers skip the multiplier
        re-projection after over-relaxed steps (the primal subproblem stays
        convex for any multiplier sign in that case).
    """

    n: int
    m: int
    objective: Callable[[np.ndarray], float]
    constraints: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    prox_solver: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    project_x: Callable[[np.ndarray], np.ndarray] = lambda x: x
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    x0: Optional[np.ndarray] = None
    linear_constraints: bool = False

    def check_point(self, w: PrimalDualPoint):
        if w.x.shape != (self.n,) or w.lam.shape != (self.m,):
            raise DimensionMismatchError(
                f"point has shapes {w.x.shape}/{w.lam.shape}, "
                f"problem expects ({self.n},)/({self.m},)"
            )


def default_start(p: ProblemSpec, compat_signs: bool = False) -> PrimalDualPoint:
    """Default initial point: preferred x when available, unit multipliers.

    The multiplier starts at ones (minus ones in sign-compatibility mode): a
    zero start combined with an unconstrained-minimizer x makes the first
    primal step a no-op, which the objective-difference stopping rule cannot
    distinguish from convergence.
    """
    x0 = np.array(p.x0, dtype=float) if p.x0 is not None else np.zeros(p.n)
    lam0 = -np.ones(p.m) if compat_signs else np.ones(p.m)
    return PrimalDualPoint(x0, lam0)


# ---------------------------------------------------------------------------
# Trace records


@dataclass(frozen=True)
class IterationRecord:
    """Scalar per-iteration diagnostics kept by every run."""

    k: int
    f_value: float
    error: float
    kkt_residual: float
    r: float
    s: float
    step_scale: float  # gamma for the relaxed solver, beta for the corrector
    step_norm: float  # weighted norm of the predictor displacement
    beta_star: Optional[float] = None
    g_is_pd: Optional[bool] = None


@dataclass(frozen=True)
class StepDetail:
    """Full per-iteration state, retained only when diagnostics are on."""

    k: int
    w: PrimalDualPoint
    w_tilde: PrimalDualPoint
    w_next_raw: PrimalDualPoint  # relaxed/corrected point before any cone re-projection
    r: float
    s: float
    jacobian: np.ndarray  # constraint Jacobian at the predictor
    step_scale: float
    beta_star: Optional[float] = None
    corrector: Optional[str] = None


@dataclass
class IterationTrace:
    """Per-iteration history of a solver run plus ergodic accumulators."""

    method: str
    param_mode: str
    f_initial: float
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    predictor_x_sum: Optional[np.ndarray] = None
    predictor_lam_sum: Optional[np.ndarray] = None
    predictor_count: int = 0
    x_iterates: Optional[list[np.ndarray]] = None
    details: Optional[list[StepDetail]] = None
    subproblem_times: list[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.records)

    def add_predictor(self, w_tilde: PrimalDualPoint):
        if self.predictor_x_sum is None:
            self.predictor_x_sum = np.zeros_like(w_tilde.x)
            self.predictor_lam_sum = np.zeros_like(w_tilde.lam)
        self.predictor_x_sum += w_tilde.x
        self.predictor_lam_sum += w_tilde.lam
        self.predictor_count += 1

    def f_series(self) -> np.ndarray:
        """Objective value at each outer iterate, starting from x^0."""
        return np.array([self.f_initial] + [rec.f_value for rec in self.records])


def ergodic_average(trace: IterationTrace) -> PrimalDualPoint:
    """Running mean of the predictor points accumulated in a trace."""
    if trace.predictor_count == 0:
        raise InvalidParameterError("trace holds no predictor points")
    c = float(trace.predictor_count)
    return PrimalDualPoint(trace.predictor_x_sum / c, trace.predictor_lam_sum / c)


# ---------------------------------------------------------------------------
# Operator and residual evaluation


def lagrangian_value(p: ProblemSpec, w: PrimalDualPoint) -> float:
    """Value of ``f(x) + lam' phi(x)`` at the given point."""
    p.check_point(w)
    phi = np.asarray(p.constraints(w.x), dtype=float)
    if phi.shape != (p.m,):
        raise DimensionMismatchError(
            f"constraints returned shape {phi.shape}, expected ({p.m},)"
        )
    return float(p.objective(w.x)) + float(w.lam @ phi)


def monotone_operator(p: ProblemSpec, w: PrimalDualPoint) -> np.ndarray:
    """The stacked primal-dual operator ``[J(x)' lam; -phi(x)]``.

    Monotone over the product of the primal set and the dual cone.
    """
    p.check_point(w)
    jac = np.asarray(p.jacobian(w.x), dtype=float)
    if jac.shape != (p.m, p.n):
        raise DimensionMismatchError(
            f"jacobian returned shape {jac.shape}, expected ({p.m}, {p.n})"
        )
    phi = np.asarray(p.constraints(w.x), dtype=float)
    return np.concatenate([jac.T @ w.lam, -phi])


def kkt_residual(p: ProblemSpec, w: PrimalDualPoint) -> float:
    """Max-norm KKT residual at ``w``.

    Takes the maximum of the projected-gradient stationarity residual,
    complementarity, primal infeasibility and dual infeasibility. When the
    problem carries no objective gradient the stationarity term is skipped
    (with a warning), so the result only bounds feasibility/complementarity.
    """
    p.check_point(w)
    phi = np.asarray(p.constraints(w.x), dtype=float)
    terms = []
    if p.m > 0:
        terms.append(float(np.max(np.abs(w.lam * phi))))
        terms.append(float(np.max(np.maximum(phi, 0.0))))
        terms.append(float(np.max(np.maximum(-w.lam, 0.0))))
    if p.gradient is not None:
        grad_l = np.asarray(p.gradient(w.x), dtype=float)
        if p.m > 0:
            grad_l = grad_l + np.asarray(p.jacobian(w.x), dtype=float).T @ w.lam
        moved = p.project_x(w.x - grad_l)
        terms.append(float(np.max(np.abs(w.x - moved))) if p.n else 0.0)
    else:
        warnings.warn(
            "objective gradient unavailable; KKT residual excludes the "
            "stationarity term",
            RuntimeWarning,
            stacklevel=2,
        )
    return max(terms) if terms else 0.0


# ---------------------------------------------------------------------------
# Structured matrices


def build_sigma(r: float, s: float, jac: np.ndarray) -> BlockMatrix:
    """Symmetric proximal weighting matrix ``[[r I, -J'], [-J, s I]]``."""
    if r <= 0 or s <= 0:
        raise InvalidParameterError("r and s must be positive")
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    m, n = jac.shape
    return BlockMatrix(r * np.eye(n), -jac.T, -jac, s * np.eye(m))


def spectral_norm(jac: np.ndarray) -> float:
    """Largest singular value of a dense matrix.

    Power iteration on the smaller Gram matrix with a deterministic start and
    a 200-iteration cap; tiny matrices (min dim <= 3) use an exact SVD.
    """
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    m, n = jac.shape
    if m == 0 or n == 0 or not np.any(jac):
        return 0.0
    if min(m, n) <= 3:
        return float(np.linalg.svd(jac, compute_uv=False)[0])
    gram = jac @ jac.T if m <= n else jac.T @ jac
    rng = np.random.default_rng(1729)
    v = rng.standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)
    rho = 0.0
    for _ in range(200):
        u = gram @ v
        norm_u = np.linalg.norm(u)
        if norm_u == 0.0:
            return 0.0
        v = u / norm_u
        rho_new = float(v @ (gram @ v))
        if abs(rho_new - rho) <= 1e-10 * max(1.0, abs(rho_new)):
            rho = rho_new
            break
        rho = rho_new
    return math.sqrt(max(rho, 0.0))


def sigma_is_pd(r: float, s: float, jac: np.ndarray) -> bool:
    """Whether the proximal weighting matrix for (r, s, J) is positive definite.

    Holds exactly when ``r * s`` exceeds the largest eigenvalue of ``J J'``.
    """
    if r <= 0 or s <= 0:
        raise InvalidParameterError("r and s must be positive")
    return r * s > spectral_norm(jac) ** 2


def sigma_norm(sigma: BlockMatrix, v: np.ndarray) -> float:
    """Weighted norm ``sqrt(v' S v)`` for a symmetric PD block matrix."""
    v = np.asarray(v, dtype=float)
    if v.shape != (sigma.n + sigma.m,):
        raise DimensionMismatchError(
            f"vector length {v.shape} incompatible with blocks ({sigma.n}, {sigma.m})"
        )
    q = sigma.quad(v)
    scale = 1.0 + float(v @ v) * max(
        np.abs(sigma.top_left).max(initial=0.0),
        np.abs(sigma.bottom_right).max(initial=0.0),
        np.abs(sigma.top_right).max(initial=0.0),
    )
    if q < -1e-12 * scale:
        raise PdViolationError(
            f"quadratic form is negative ({q:.3e}); matrix not positive definite"
        )
    return math.sqrt(max(q, 0.0))


# ---------------------------------------------------------------------------
# Validation helpers


def finite_difference_jacobian(
    constraints: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    eps: float = 1e-6,
) -> np.ndarray:
    """Central finite-difference Jacobian of a vector-valued map."""
    x = np.asarray(x, dtype=float)
    base = np.asarray(constraints(x), dtype=float)
    jac = np.zeros((base.size, x.size))
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = eps
        jac[:, j] = (
            np.asarray(constraints(x + step), dtype=float)
            - np.asarray(constraints(x - step), dtype=float)
        ) / (2 * eps)
    return jac


def prox_optimality_gap(
    p: ProblemSpec,
    lam: np.ndarray,
    x_anchor: np.ndarray,
    r: float,
    x_tilde: np.ndarray,
    x_samples: np.ndarray,
) -> float:
    """Worst violation of the prox subproblem's first-order characterization.

    For the minimizer ``x_tilde`` of ``f + lam' phi + (r/2)||. - anchor||^2``
    the inequality
    ``f(x) - f(x_tilde) + (x - x_tilde)' [J(x_tilde)' lam + r (x_tilde - x_anchor)] >= 0``
    must hold for every feasible x; returns the minimum of the left-hand side
    over the given sample points (negative values signal a violation).
    """
    lam = np.asarray(lam, dtype=float)
    x_tilde = np.asarray(x_tilde, dtype=float)
    grad_term = np.asarray(p.jacobian(x_tilde), dtype=float).T @ lam + r * (
        x_tilde - np.asarray(x_anchor, dtype=float)
    )
    f_tilde = float(p.objective(x_tilde))
    worst = np.inf
    for x in np.atleast_2d(x_samples):
        x = p.project_x(np.asarray(x, dtype=float))
        lhs = float(p.objective(x)) - f_tilde + float((x - x_tilde) @ grad_term)
        worst = min(worst, lhs)
    return worst
