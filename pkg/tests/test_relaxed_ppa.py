import numpy as np
import pytest

from ppapc.problem import (
    InvalidParameterError,
    PrimalDualPoint,
    build_sigma,
    sigma_is_pd,
    spectral_norm,
)
from ppapc.qcqp import generate_instance, oracle_solve, qcqp_problem
from ppapc.relaxed_ppa import (
    RelaxedPpaConfig,
    ppa_dual_step,
    ppa_primal_step,
    relax_step,
    run_relaxed_ppa,
    schedule_rk,
    update_r,
    update_s,
)
from conftest import certified_active_instances, shrink_constraints


def constant_jacobian_problem(jac):
    """Least-squares objective with affine constraints of a fixed Jacobian."""
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    m, n = jac.shape
    return __import__("ppapc").qcqp.linear_problem(
        __import__("ppapc").qcqp.LinearInstance(
            A=np.eye(n), a=np.zeros(n), C=jac, d=np.ones(m)
        )
    )


# ---------------------------------------------------------------------------
# parameter updates


def test_update_r_scales_jacobian_norm():
    p = constant_jacobian_problem(np.array([[9.0, 0.0]]))
    assert update_r(np.zeros(2), p, mu1=9.0) == pytest.approx(1.0, rel=1e-14)


def test_update_r_floor_on_vanishing_jacobian():
    p = constant_jacobian_problem(np.zeros((1, 2)))
    assert update_r(np.zeros(2), p, mu1=9.0) == 1e-6


def test_update_r_matches_svd_oracle():
    inst = generate_instance(3, 5, seed=2)
    p = qcqp_problem(inst)
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.standard_normal(5)
        r = update_r(x, p, mu1=9.0)
        exact = np.linalg.svd(p.jacobian(x), compute_uv=False)[0]
        assert r * 9.0 == pytest.approx(exact, rel=1e-10)


def test_update_r_requires_mu_above_one():
    p = constant_jacobian_problem(np.ones((1, 2)))
    with pytest.raises(InvalidParameterError):
        update_r(np.zeros(2), p, mu1=1.0)


def test_update_s_hand_value_and_pd_guarantee():
    p = constant_jacobian_problem(np.array([[2.0, 0.0]]))
    s = update_s(1.0, np.zeros(2), p, mu2=1.2)
    assert s == pytest.approx(4.8, rel=1e-14)
    assert 1.0 * s > 4.0  # product exceeds the squared norm


def test_update_s_floor_on_vanishing_jacobian():
    p = constant_jacobian_problem(np.zeros((1, 2)))
    assert update_s(0.5, np.zeros(2), p, mu2=1.2) == 1e-6


def test_update_s_keeps_weighting_matrix_pd():
    inst = generate_instance(2, 4, seed=3)
    p = qcqp_problem(inst)
    rng = np.random.default_rng(1)
    for _ in range(10):
        x_k = rng.standard_normal(4)
        x_tilde = rng.standard_normal(4)
        r = update_r(x_k, p, mu1=9.0)
        s = update_s(r, x_tilde, p, mu2=1.2)
        jac = p.jacobian(x_tilde)
        assert sigma_is_pd(r, s, jac)
        assert np.linalg.eigvalsh(build_sigma(r, s, jac).dense())[0] > 0


def test_update_s_rejects_nonpositive_r():
    p = constant_jacobian_problem(np.ones((1, 2)))
    with pytest.raises(InvalidParameterError):
        update_s(0.0, np.zeros(2), p, mu2=1.2)


# ---------------------------------------------------------------------------
# primal / dual steps


def test_primal_step_zero_multiplier_closed_form():
    inst = generate_instance(2, 4, seed=4)
    p = qcqp_problem(inst)
    rng = np.random.default_rng(2)
    x_k = rng.standard_normal(4)
    r = 0.9
    out = ppa_primal_step(p, PrimalDualPoint(x_k, np.zeros(2)), r)
    expected = np.linalg.solve(
        2 * inst.A.T @ inst.A + r * np.eye(4), 2 * inst.A.T @ inst.a + r * x_k
    )
    np.testing.assert_allclose(out, expected, rtol=1e-10)


def test_primal_step_fixed_point():
    inst = generate_instance(2, 4, seed=4)
    p = qcqp_problem(inst)
    lam = np.array([0.4, 0.1])
    # find the stationary point of the subproblem family: iterate to a fixed point
    x = np.zeros(4)
    for _ in range(200):
        x = p.prox_solver(lam, x, 1.0)
    out = ppa_primal_step(p, PrimalDualPoint(x, lam), 1.0)
    np.testing.assert_allclose(out, x, atol=1e-10)


def test_dual_step_without_displacement_reduces_to_plain_projection():
    inst = generate_instance(2, 4, seed=5)
    p = qcqp_problem(inst)
    rng = np.random.default_rng(3)
    x = rng.standard_normal(4)
    lam = rng.uniform(0, 1, 2)
    out = ppa_dual_step(p, PrimalDualPoint(x, lam), x, s_k=2.0)
    np.testing.assert_allclose(
        out, np.maximum(lam + p.constraints(x) / 2.0, 0.0), atol=1e-14
    )


def test_dual_step_exact_cancellation_projects_to_zero():
    # one affine constraint engineered so phi + J dx = -s lam exactly
    jac = np.array([[1.0, 0.0]])
    p = constant_jacobian_problem(jac)
    s = 2.0
    lam = np.array([1.5])
    x_k = np.zeros(2)
    # phi(x) = x1 - 1; pick x_tilde: phi(x_tilde) + J (x_tilde - x_k) = -3
    # => 2 x1 - 1 = -3 => x1 = -1
    x_tilde = np.array([-1.0, 0.7])
    out = ppa_dual_step(p, PrimalDualPoint(x_k, lam), x_tilde, s)
    np.testing.assert_array_equal(out, np.zeros(1))


def test_dual_step_matches_per_constraint_recomputation():
    inst = generate_instance(3, 4, seed=6)
    p = qcqp_problem(inst)
    rng = np.random.default_rng(4)
    x_k = rng.standard_normal(4)
    x_t = rng.standard_normal(4)
    lam = rng.uniform(0, 2, 3)
    s = 3.3
    out = ppa_dual_step(p, PrimalDualPoint(x_k, lam), x_t, s)
    for i in range(3):
        resid = inst.B[i] @ x_t - inst.b[i]
        val = resid @ resid - inst.c[i] + 2 * resid @ (inst.B[i] @ (x_t - x_k))
        assert out[i] == pytest.approx(max(lam[i] + val / s, 0.0), abs=1e-12)


def test_relax_step_gamma_one_returns_predictor():
    w = PrimalDualPoint(np.array([1.0, 2.0]), np.array([3.0]))
    wt = PrimalDualPoint(np.array([0.0, 1.0]), np.array([0.5]))
    out = relax_step(w, wt, gamma=1.0)
    np.testing.assert_array_equal(out.x, wt.x)
    np.testing.assert_array_equal(out.lam, wt.lam)


def test_relax_step_overrelaxed_arithmetic():
    w = PrimalDualPoint(np.zeros(2), np.zeros(1))
    wt = PrimalDualPoint(np.array([2.0, 2.0]), np.array([2.0]))
    out = relax_step(w, wt, gamma=1.5)
    np.testing.assert_allclose(out.x, [3.0, 3.0])
    np.testing.assert_allclose(out.lam, [3.0])


def test_relax_step_fixed_point_any_gamma():
    w = PrimalDualPoint(np.array([1.0, -1.0]), np.array([0.3]))
    for gamma in (0.5, 1.0, 1.9):
        out = relax_step(w, w, gamma)
        np.testing.assert_array_equal(out.x, w.x)
        np.testing.assert_array_equal(out.lam, w.lam)


def test_relax_step_rejects_bad_gamma():
    w = PrimalDualPoint(np.zeros(1), np.zeros(0))
    with pytest.raises(InvalidParameterError):
        relax_step(w, w, gamma=2.0)


# ---------------------------------------------------------------------------
# schedule mode


def schedule_cfg(**kw):
    base = dict(
        param_mode="schedule", L=1.0, c1=4.0, c2=0.0, sigma=0.0, horizon=3
    )
    base.update(kw)
    return RelaxedPpaConfig(**base)


def test_schedule_terminal_value():
    cfg = schedule_cfg(L=2.0, c1=3.0, c2=1.0, sigma=0.5, horizon=10)
    assert schedule_rk(10, cfg) == pytest.approx(2.0 * 3.0 + 0.5)


def test_schedule_constant_decrement():
    cfg = schedule_cfg(L=2.0, c1=3.0, c2=1.0, sigma=0.5, horizon=10)
    step = np.sqrt(2.0 * 1.0 + 0.5)
    for k in range(1, 11):
        assert schedule_rk(k - 1, cfg) - schedule_rk(k, cfg) == pytest.approx(step)


def test_schedule_degenerate_curvature_constant():
    assert schedule_rk(0, schedule_cfg()) == pytest.approx(4.0)


def test_schedule_rejects_k_beyond_horizon():
    with pytest.raises(InvalidParameterError):
        schedule_rk(4, schedule_cfg())


# ---------------------------------------------------------------------------
# full runs


def test_run_unconstrained_reaches_least_squares():
    inst = generate_instance(0, 5, seed=7)
    p = qcqp_problem(inst)
    point, trace = run_relaxed_ppa(p, RelaxedPpaConfig(tau=1e-12))
    assert trace.converged
    np.testing.assert_allclose(point.x, inst.least_squares_x, atol=1e-8)
    assert point.lam.shape == (0,)


def test_run_matches_oracle_on_tiny_instance(active_pairs):
    inst, w_star = active_pairs[0]
    p = qcqp_problem(inst)
    for gamma in (1.0, 1.5):
        point, trace = run_relaxed_ppa(
            p, RelaxedPpaConfig(gamma=gamma, tau=1e-13, max_iters=50_000)
        )
        assert trace.converged
        assert np.max(np.abs(point.x - w_star.x)) <= 1e-5


def test_run_reports_non_convergence():
    inst = shrink_constraints(generate_instance(2, 4, seed=2))
    p = qcqp_problem(inst)
    point, trace = run_relaxed_ppa(p, RelaxedPpaConfig(max_iters=3))
    assert not trace.converged
    assert trace.iterations == 3


def test_run_rejects_start_outside_cone():
    p = qcqp_problem(generate_instance(1, 3, seed=0))
    with pytest.raises(InvalidParameterError):
        run_relaxed_ppa(
            p, RelaxedPpaConfig(), PrimalDualPoint(np.zeros(3), np.array([-1.0]))
        )


def test_run_trace_shape_and_stopping_semantics():
    inst = generate_instance(1, 3, seed=8)
    p = qcqp_problem(inst)
    cfg = RelaxedPpaConfig(tau=1e-10)
    point, trace = run_relaxed_ppa(p, cfg)
    assert trace.converged
    assert len(trace.records) == trace.iterations
    assert trace.records[-1].error < cfg.tau
    assert all(rec.error >= cfg.tau for rec in trace.records[:-1])
    assert all(rec.error >= 0 for rec in trace.records)
    assert point.in_cone()


def test_run_adaptive_keeps_weighting_matrix_pd(active_pairs):
    inst, _ = active_pairs[1]
    p = qcqp_problem(inst)
    _, trace = run_relaxed_ppa(
        p, RelaxedPpaConfig(gamma=1.5, tau=1e-10, diagnostics=True)
    )
    for det in trace.details:
        assert sigma_is_pd(det.r, det.s, det.jacobian)


def test_run_predictor_satisfies_subproblem_optimality(active_pairs):
    # both first-order conditions of the prediction hold at the ground truth
    inst, w_star = active_pairs[2]
    p = qcqp_problem(inst)
    _, trace = run_relaxed_ppa(
        p, RelaxedPpaConfig(gamma=1.5, tau=1e-10, diagnostics=True)
    )
    f_star = p.objective(w_star.x)
    for det in trace.details:
        xt, lt = det.w_tilde.x, det.w_tilde.lam
        jac = det.jacobian
        row1 = (
            f_star
            - p.objective(xt)
            + (w_star.x - xt) @ (jac.T @ det.w.lam + det.r * (xt - det.w.x))
        )
        row2 = (w_star.lam - lt) @ (
            -p.constraints(xt) - jac @ (xt - det.w.x) + det.s * (lt - det.w.lam)
        )
        assert row1 >= -1e-6
        assert row2 >= -1e-6


def test_run_schedule_mode_decreasing_weighting_matrices():
    inst = shrink_constraints(generate_instance(2, 3, seed=1))
    p = qcqp_problem(inst)
    # generous curvature and iterate bounds for this instance family
    lip = 4.0 * sum(
        np.linalg.norm(inst.B[i].T @ inst.B[i], 2) ** 2 for i in range(inst.m)
    )
    horizon = 60
    cfg = RelaxedPpaConfig(
        gamma=1.0,
        tau=1e-300,
        max_iters=horizon + 1,
        param_mode="schedule",
        L=lip,
        c1=25.0,
        c2=25.0,
        sigma=1.0,
        horizon=horizon,
        diagnostics=True,
    )
    _, trace = run_relaxed_ppa(p, cfg)
    assert trace.iterations >= 2
    for prev, cur in zip(trace.details, trace.details[1:]):
        assert prev.r > cur.r
        diff = (
            build_sigma(prev.r, prev.s, prev.jacobian).dense()
            - build_sigma(cur.r, cur.s, cur.jacobian).dense()
        )
        assert np.linalg.eigvalsh(diff)[0] >= -1e-8


def test_run_fixed_mode_requires_factors():
    p = qcqp_problem(generate_instance(1, 3, seed=0))
    with pytest.raises(InvalidParameterError):
        run_relaxed_ppa(p, RelaxedPpaConfig(param_mode="fixed"))


def test_overrelaxed_multiplier_reprojected_into_cone(active_pairs):
    inst, _ = active_pairs[3]
    p = qcqp_problem(inst)
    _, trace = run_relaxed_ppa(
        p, RelaxedPpaConfig(gamma=1.9, tau=1e-10, diagnostics=True)
    )
    raw_exits = sum(1 for det in trace.details if not det.w_next_raw.in_cone())
    assert raw_exits > 0  # over-relaxation does leave the cone sometimes
    for det in trace.details:
        assert det.w.in_cone()  # but the next base point is always back inside
