"""Quadratically constrained quadratic programming benchmark backend.

Random instance generation, the closed-form inner updates both solvers use on
this problem family, JSON (de)serialization for replayable runs, and an
active-set oracle that produces ground-truth optima for tiny instances.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .problem import (
    InvalidParameterError,
    PrimalDualPoint,
    ProblemSpec,
    SubproblemError,
    kkt_residual,
    project_dual,
)

__all__ = [
    "QcqpInstance",
    "LinearInstance",
    "InstanceFormatError",
    "OracleError",
    "generate_instance",
    "qcqp_problem",
    "closed_form_x_update",
    "closed_form_lambda_ppa",
    "closed_form_lambda_pc",
    "oracle_solve",
    "oracle_solve_linear",
    "generate_linear_instance",
    "linear_problem",
    "save_instance",
    "load_instance",
]


class InstanceFormatError(ValueError):
    """A serialized instance file is malformed."""


class OracleError(RuntimeError):
    """The ground-truth solver could not certify any candidate."""


@dataclass(frozen=True)
class QcqpInstance:
    """Data of ``min ||A x - a||^2  s.t.  ||B_i x - b_i||^2 <= c_i``."""

    A: np.ndarray  # (n, n)
    a: np.ndarray  # (n,)
    B: np.ndarray  # (m, n, n)
    b: np.ndarray  # (m, n)
    c: np.ndarray  # (m,)
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "B", np.asarray(self.B, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        n = self.A.shape[0]
        m = self.c.shape[0]
        if self.A.shape != (n, n) or self.a.shape != (n,):
            raise InstanceFormatError("objective data has inconsistent shapes")
        if self.B.shape != (m, n, n) or self.b.shape != (m, n):
            raise InstanceFormatError("constraint data has inconsistent shapes")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.c.shape[0]

    # Gram factors reused by every subproblem solve.
    @cached_property
    def _obj_gram(self) -> np.ndarray:
        return 2.0 * self.A.T @ self.A

    @cached_property
    def _obj_rhs(self) -> np.ndarray:
        return 2.0 * self.A.T @ self.a

    @cached_property
    def _con_gram(self) -> np.ndarray:
        # (m, n, n): 2 B_i' B_i
        return 2.0 * np.einsum("ikj,ikl->ijl", self.B, self.B)

    @cached_property
    def _con_rhs(self) -> np.ndarray:
        # (m, n): 2 B_i' b_i
        return 2.0 * np.einsum("ikj,ik->ij", self.B, self.b)

    @cached_property
    def least_squares_x(self) -> np.ndarray:
        return np.linalg.lstsq(self.A, self.a, rcond=None)[0]


def generate_instance(m: int, n: int, seed: int) -> QcqpInstance:
    """Draw a random instance, deterministically per seed.

    All matrix/vector entries are uniform on [0, 1); the constraint bounds are
    ``10 (1 + u)`` with u uniform, so each lies in [10, 20). The fill order is
    A, a, then each (B_i, b_i) pair, then the bounds.
    """
    if m < 0 or n < 1:
        raise InvalidParameterError("need m >= 0 and n >= 1")
    rng = np.random.default_rng(seed)
    A = rng.random((n, n))
    a = rng.random(n)
    B = np.empty((m, n, n))
    b = np.empty((m, n))
    for i in range(m):
        B[i] = rng.random((n, n))
        b[i] = rng.random(n)
    c = 10.0 * (1.0 + rng.random(m))
    return QcqpInstance(A, a, B, b, c, seed=seed)


def _constraint_values(inst: QcqpInstance, x: np.ndarray) -> np.ndarray:
    resid = inst.B @ x - inst.b  # (m, n)
    return np.einsum("ij,ij->i", resid, resid) - inst.c


def _constraint_jacobian(inst: QcqpInstance, x: np.ndarray) -> np.ndarray:
    resid = inst.B @ x - inst.b
    return 2.0 * np.einsum("ij,ijk->ik", resid, inst.B)


def qcqp_problem(inst: QcqpInstance) -> ProblemSpec:
    """Wrap an instance as a generic problem with closed-form inner solves."""

    def objective(x):
        r = inst.A @ x - inst.a
        return float(r @ r)

    def gradient(x):
        return 2.0 * inst.A.T @ (inst.A @ x - inst.a)

    return ProblemSpec(
        n=inst.n,
        m=inst.m,
        objective=objective,
        constraints=lambda x: _constraint_values(inst, x),
        jacobian=lambda x: _constraint_jacobian(inst, x),
        prox_solver=lambda lam, anchor, r: closed_form_x_update(inst, lam, anchor, r),
        gradient=gradient,
        x0=inst.least_squares_x,
    )


def closed_form_x_update(
    inst: QcqpInstance, lam: np.ndarray, x_anchor: np.ndarray, r: float
) -> np.ndarray:
    """Exact minimizer of the regularized primal subproblem.

    Solves ``(2 A'A + 2 sum_i lam_i B_i'B_i + r I) x = 2 A'a + 2 sum_i lam_i
    B_i'b_i + r x_anchor`` by a Cholesky factorization. Nonnegative
    multipliers keep the system matrix positive definite; with sign-flipped
    multipliers (compatibility mode) the solve can fail and reports which
    multipliers broke definiteness.
    """
    lam = np.asarray(lam, dtype=float)
    x_anchor = np.asarray(x_anchor, dtype=float)
    if r <= 0:
        raise InvalidParameterError("prox regularization r must be positive")
    h = inst._obj_gram + r * np.eye(inst.n)
    rhs = inst._obj_rhs + r * x_anchor
    if inst.m:
        h = h + np.tensordot(lam, inst._con_gram, axes=1)
        rhs = rhs + lam @ inst._con_rhs
    try:
        factor = cho_factor(h, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        negative = np.flatnonzero(lam < 0).tolist()
        raise SubproblemError(
            "primal subproblem matrix is not positive definite"
            + (f" (negative multipliers at indices {negative})" if negative else "")
        ) from exc
    diag = np.abs(np.diag(factor[0]))
    if diag.min() > 0 and (diag.max() / diag.min()) ** 2 > 1e12:
        warnings.warn(
            "primal subproblem matrix is ill conditioned "
            f"(condition estimate above 1e12)",
            RuntimeWarning,
            stacklevel=2,
        )
    return cho_solve(factor, rhs, check_finite=False)


def closed_form_lambda_ppa(
    inst: QcqpInstance,
    x_tilde: np.ndarray,
    x_k: np.ndarray,
    lambda_k: np.ndarray,
    s: float,
    compat_signs: bool = False,
) -> np.ndarray:
    """Multiplier update with the linearized constraint correction term.

    Computed one constraint at a time from the raw instance data; serves as an
    independent path against the generic solver formula.
    """
    if s <= 0:
        raise InvalidParameterError("dual regularization s must be positive")
    x_tilde = np.asarray(x_tilde, dtype=float)
    dx = x_tilde - np.asarray(x_k, dtype=float)
    out = np.empty(inst.m)
    for i in range(inst.m):
        resid = inst.B[i] @ x_tilde - inst.b[i]
        val = resid @ resid - inst.c[i] + 2.0 * resid @ (inst.B[i] @ dx)
        out[i] = lambda_k[i] + val / s
    return project_dual(out, compat_signs)


def closed_form_lambda_pc(
    inst: QcqpInstance,
    x_tilde: np.ndarray,
    lambda_k: np.ndarray,
    s: float,
    compat_signs: bool = False,
) -> np.ndarray:
    """Multiplier update without the linearization term (prediction step)."""
    if s <= 0:
        raise InvalidParameterError("dual regularization s must be positive")
    x_tilde = np.asarray(x_tilde, dtype=float)
    out = np.empty(inst.m)
    for i in range(inst.m):
        resid = inst.B[i] @ x_tilde - inst.b[i]
        out[i] = lambda_k[i] + (resid @ resid - inst.c[i]) / s
    return project_dual(out, compat_signs)


# ---------------------------------------------------------------------------
# Ground-truth oracle (tiny instances only)


def _newton_kkt(f_grad, f_hess, phi, phi_grad, phi_hess, active, x0, n):
    """Damped Newton on the stationarity + active-constraint system.

    Unknowns are (x, multipliers on the active set); returns (x, lam_active)
    or None when Newton fails to drive the residual below tolerance.
    """
    k = len(active)

    def residual(x, lam_act):
        g = f_grad(x)
        for lam_i, i in zip(lam_act, active):
            g = g + lam_i * phi_grad(x, i)
        parts = [g] + [[phi(x, i)] for i in active]
        return np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts])

    x = np.array(x0, dtype=float)
    lam_act = np.ones(k)
    res = residual(x, lam_act)
    for _ in range(100):
        if np.max(np.abs(res)) <= 1e-12:
            break
        hess = f_hess(x)
        for lam_i, i in zip(lam_act, active):
            hess = hess + lam_i * phi_hess(x, i)
        grads = np.array([phi_grad(x, i) for i in active]).reshape(k, n)
        jac = np.zeros((n + k, n + k))
        jac[:n, :n] = hess
        jac[:n, n:] = grads.T
        jac[n:, :n] = grads
        try:
            step = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError:
            return None
        norm0 = np.linalg.norm(res)
        t = 1.0
        while t > 1e-12:
            x_new = x + t * step[:n]
            lam_new = lam_act + t * step[n:]
            res_new = residual(x_new, lam_new)
            if np.linalg.norm(res_new) <= (1.0 - 0.25 * t) * norm0:
                break
            t *= 0.5
        else:
            return None
        x, lam_act, res = x_new, lam_new, res_new
    if np.max(np.abs(res)) > 1e-10:
        return None
    return x, lam_act


def _active_set_solve(p, n, m, f_grad, f_hess, phi, phi_grad, phi_hess, starts):
    best = None
    best_f = np.inf
    for mask in range(2**m):
        active = [i for i in range(m) if mask & (1 << i)]
        for x0 in starts:
            out = _newton_kkt(f_grad, f_hess, phi, phi_grad, phi_hess, active, x0, n)
            if out is None:
                continue
            x, lam_act = out
            lam = np.zeros(m)
            for lam_i, i in zip(lam_act, active):
                if lam_i < -1e-9:
                    lam = None
                    break
                lam[i] = max(lam_i, 0.0)
            if lam is None:
                continue
            if any(phi(x, i) > 1e-9 for i in range(m) if i not in active):
                continue
            cand = PrimalDualPoint(x, lam)
            if kkt_residual(p, cand) > 1e-8:
                continue
            f_val = p.objective(x)
            if f_val < best_f:
                best, best_f = cand, f_val
            break  # this active set is settled; no need to try other starts
    if best is None:
        raise OracleError("no active set produced a certified KKT point")
    return best


def oracle_solve(inst: QcqpInstance) -> PrimalDualPoint:
    """Ground-truth optimum by full active-set enumeration.

    Restricted to tiny instances (m <= 3, n <= 6) where enumerating all 2^m
    active sets with a damped Newton refinement is cheap. The returned point
    is re-verified against the KKT residual before being accepted.
    """
    if inst.m > 3 or inst.n > 6:
        raise InvalidParameterError("oracle limited to m <= 3 and n <= 6")
    p = qcqp_problem(inst)

    def f_grad(x):
        return 2.0 * inst.A.T @ (inst.A @ x - inst.a)

    def f_hess(x):
        return inst._obj_gram.copy()

    def phi(x, i):
        r = inst.B[i] @ x - inst.b[i]
        return float(r @ r) - inst.c[i]

    def phi_grad(x, i):
        return 2.0 * inst.B[i].T @ (inst.B[i] @ x - inst.b[i])

    def phi_hess(x, i):
        return inst._con_gram[i]

    starts = [inst.least_squares_x, np.zeros(inst.n)]
    return _active_set_solve(
        p, inst.n, inst.m, f_grad, f_hess, phi, phi_grad, phi_hess, starts
    )


# ---------------------------------------------------------------------------
# Linear-constraint companion family (constant Jacobian)


@dataclass(frozen=True)
class LinearInstance:
    """Data of ``min ||A x - a||^2  s.t.  C x <= d`` (affine constraints)."""

    A: np.ndarray
    a: np.ndarray
    C: np.ndarray  # (m, n)
    d: np.ndarray  # (m,)
    seed: int | None = None

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @cached_property
    def _obj_gram(self) -> np.ndarray:
        return 2.0 * self.A.T @ self.A

    @cached_property
    def _obj_rhs(self) -> np.ndarray:
        return 2.0 * self.A.T @ self.a

    @cached_property
    def least_squares_x(self) -> np.ndarray:
        return np.linalg.lstsq(self.A, self.a, rcond=None)[0]


def generate_linear_instance(m: int, n: int, seed: int) -> LinearInstance:
    """Random affine-constrained least squares with active constraints.

    The offsets are chosen so the unconstrained minimizer violates every
    constraint slightly, which keeps the multipliers busy, while a strictly
    feasible point is guaranteed to exist.
    """
    if m > n:
        raise InvalidParameterError("need m <= n so the feasible set is nonempty")
    rng = np.random.default_rng(seed)
    A = rng.random((n, n))
    a = rng.random(n)
    C = rng.random((m, n))
    x_ls = np.linalg.lstsq(A, a, rcond=None)[0]
    d = C @ x_ls - rng.random(m)
    return LinearInstance(A, a, C, d, seed=seed)


def linear_problem(lin: LinearInstance) -> ProblemSpec:
    def objective(x):
        r = lin.A @ x - lin.a
        return float(r @ r)

    def prox(lam, anchor, r):
        h = lin._obj_gram + r * np.eye(lin.n)
        rhs = lin._obj_rhs - lin.C.T @ lam + r * np.asarray(anchor, dtype=float)
        return cho_solve(cho_factor(h, lower=True, check_finite=False), rhs)

    return ProblemSpec(
        n=lin.n,
        m=lin.m,
        objective=objective,
        constraints=lambda x: lin.C @ x - lin.d,
        jacobian=lambda x: lin.C,
        prox_solver=prox,
        gradient=lambda x: 2.0 * lin.A.T @ (lin.A @ x - lin.a),
        x0=lin.least_squares_x,
        linear_constraints=True,
    )


def oracle_solve_linear(lin: LinearInstance) -> PrimalDualPoint:
    """Active-set ground truth for the affine-constrained family."""
    if lin.m > 3 or lin.n > 6:
        raise InvalidParameterError("oracle limited to m <= 3 and n <= 6")
    p = linear_problem(lin)

    def f_grad(x):
        return 2.0 * lin.A.T @ (lin.A @ x - lin.a)

    def f_hess(x):
        return lin._obj_gram.copy()

    def phi(x, i):
        return float(lin.C[i] @ x - lin.d[i])

    def phi_grad(x, i):
        return lin.C[i].copy()

    def phi_hess(x, i):
        return np.zeros((lin.n, lin.n))

    starts = [lin.least_squares_x, np.zeros(lin.n)]
    return _active_set_solve(
        p, lin.n, lin.m, f_grad, f_hess, phi, phi_grad, phi_hess, starts
    )


# ---------------------------------------------------------------------------
# Serialization


def save_instance(inst: QcqpInstance, path) -> None:
    """Write an instance as JSON (matrices row-major) for replayable runs."""
    doc = {
        "n": inst.n,
        "m": inst.m,
        "seed": inst.seed,
        "A": inst.A.tolist(),
        "a": inst.a.tolist(),
        "B": inst.B.tolist(),
        "b": inst.b.tolist(),
        "c": inst.c.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_instance(path) -> QcqpInstance:
    """Read an instance written by :func:`save_instance`.

    Raises
    ------
    InstanceFormatError
        Naming the missing or malformed field.
    """
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InstanceFormatError(f"not valid JSON: {exc}") from exc
    for key in ("n", "m", "A", "a", "B", "b", "c"):
        if key not in doc:
            raise InstanceFormatError(f"missing field {key!r}")
    n, m = int(doc["n"]), int(doc["m"])
    try:
        inst = QcqpInstance(
            np.asarray(doc["A"], dtype=float).reshape(n, n),
            np.asarray(doc["a"], dtype=float).reshape(n),
            np.asarray(doc["B"], dtype=float).reshape(m, n, n),
            np.asarray(doc["b"], dtype=float).reshape(m, n),
            np.asarray(doc["c"], dtype=float).reshape(m),
            seed=doc.get("seed"),
        )
    except (ValueError, TypeError) as exc:
        raise InstanceFormatError(f"field data inconsistent with (n={n}, m={m}): {exc}") from exc
    return inst
