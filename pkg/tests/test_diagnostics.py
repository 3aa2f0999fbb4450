import copy
import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from ppapc.diagnostics import (
    check_ergodic_gap,
    check_monotone,
    check_pc_contraction,
    check_ppa_contraction,
    write_gap_series,
)
from ppapc.pc import PcConfig, run_pc
from ppapc.problem import (
    InvalidParameterError,
    IterationTrace,
    PrimalDualPoint,
    StepDetail,
    spectral_norm,
)
from ppapc.qcqp import (
    generate_instance,
    generate_linear_instance,
    linear_problem,
    oracle_solve_linear,
    qcqp_problem,
)
from ppapc.relaxed_ppa import RelaxedPpaConfig, run_relaxed_ppa


def perturb_away_from(trace, w_star, factor=1.1):
    """Push every recorded next point 10% further from the ground truth."""
    out = copy.copy(trace)
    out.details = [
        replace(
            det,
            w_next_raw=PrimalDualPoint(
                w_star.x + factor * (det.w_next_raw.x - w_star.x),
                w_star.lam + factor * (det.w_next_raw.lam - w_star.lam),
            ),
        )
        for det in trace.details
    ]
    return out


# ---------------------------------------------------------------------------
# contraction


@pytest.mark.parametrize("gamma", [1.0, 1.5])
def test_ppa_contraction_holds_on_converged_runs(gamma, active_pairs):
    for inst, w_star in active_pairs[:4]:
        p = qcqp_problem(inst)
        _, trace = run_relaxed_ppa(
            p, RelaxedPpaConfig(gamma=gamma, tau=1e-10, diagnostics=True)
        )
        report = check_ppa_contraction(trace, w_star)
        assert report.passed
        assert report.iterations == trace.iterations
        assert np.all(report.sigma_min_eigs > 0)


def test_ppa_contraction_trivial_at_optimum(active_pairs):
    inst, w_star = active_pairs[0]
    p = qcqp_problem(inst)
    # a hand-built trace sitting exactly at the optimum
    jac = np.asarray(p.jacobian(w_star.x), dtype=float)
    r = spectral_norm(jac) / 9.0
    s = 1.2 * spectral_norm(jac) ** 2 / r
    det = StepDetail(
        k=0, w=w_star, w_tilde=w_star, w_next_raw=w_star, r=r, s=s,
        jacobian=jac, step_scale=1.0,
    )
    trace = IterationTrace(method="rppa", param_mode="adaptive", f_initial=0.0)
    trace.details = [det]
    report = check_ppa_contraction(trace, w_star)
    assert report.lhs[0] == pytest.approx(0.0, abs=1e-14)
    assert report.rhs[0] == pytest.approx(0.0, abs=1e-14)
    assert report.passed


def test_ppa_contraction_detects_corruption(active_pairs):
    inst, w_star = active_pairs[1]
    p = qcqp_problem(inst)
    _, trace = run_relaxed_ppa(
        p, RelaxedPpaConfig(gamma=1.5, tau=1e-10, diagnostics=True)
    )
    bad = perturb_away_from(trace, w_star)
    report = check_ppa_contraction(bad, w_star)
    assert report.violations >= 1
    assert report.max_violation > 0


def test_pc_contraction_holds_on_converged_runs(active_pairs):
    for choice in ("upper", "lower"):
        for inst, w_star in active_pairs[:3]:
            p = qcqp_problem(inst)
            _, trace = run_pc(
                p, PcConfig(corrector=choice, tau=1e-10, diagnostics=True)
            )
            report = check_pc_contraction(trace, w_star)
            assert report.passed
            assert np.all(report.sigma_min_eigs > 0)
            assert np.all(report.g_min_eigs > -1e-8)


def test_pc_contraction_degenerate_zero_step_is_equality(active_pairs):
    inst, w_star = active_pairs[0]
    p = qcqp_problem(inst)
    jac = np.asarray(p.jacobian(w_star.x), dtype=float)
    w = PrimalDualPoint(w_star.x + 0.1, w_star.lam)
    det = StepDetail(
        k=0, w=w, w_tilde=w, w_next_raw=w, r=1.0,
        s=1.2 * spectral_norm(jac) ** 2, jacobian=jac, step_scale=0.0,
        beta_star=0.0, corrector="lower",
    )
    trace = IterationTrace(method="pc", param_mode="adaptive", f_initial=0.0)
    trace.details = [det]
    report = check_pc_contraction(trace, w_star)
    assert report.lhs[0] == pytest.approx(report.rhs[0], rel=1e-12)
    assert report.passed


def test_pc_contraction_detects_corruption(active_pairs):
    inst, w_star = active_pairs[2]
    p = qcqp_problem(inst)
    _, trace = run_pc(p, PcConfig(tau=1e-10, diagnostics=True))
    report = check_pc_contraction(perturb_away_from(trace, w_star), w_star)
    assert report.violations >= 1


def test_contraction_requires_history(active_pairs):
    inst, w_star = active_pairs[0]
    p = qcqp_problem(inst)
    _, trace = run_relaxed_ppa(p, RelaxedPpaConfig(tau=1e-10))
    with pytest.raises(InvalidParameterError):
        check_ppa_contraction(trace, w_star)


def test_contraction_reports_are_deterministic(active_pairs):
    inst, w_star = active_pairs[0]
    p = qcqp_problem(inst)
    _, trace = run_relaxed_ppa(
        p, RelaxedPpaConfig(gamma=1.5, tau=1e-10, diagnostics=True)
    )
    rep1 = check_ppa_contraction(trace, w_star)
    rep2 = check_ppa_contraction(trace, w_star)
    np.testing.assert_array_equal(rep1.lhs, rep2.lhs)
    np.testing.assert_array_equal(rep1.rhs, rep2.rhs)


def test_contraction_report_export(tmp_path, active_pairs):
    inst, w_star = active_pairs[0]
    p = qcqp_problem(inst)
    _, trace = run_pc(p, PcConfig(tau=1e-8, diagnostics=True))
    report = check_pc_contraction(trace, w_star)
    jpath = tmp_path / "report.json"
    cpath = tmp_path / "report.csv"
    report.to_json(jpath)
    report.to_csv(cpath)
    doc = json.loads(jpath.read_text())
    assert doc["passed"] and doc["violations"] == 0
    assert doc["iterations"] == report.iterations
    with open(cpath) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == report.iterations
    assert float(rows[0]["lhs"]) == report.lhs[0]


# ---------------------------------------------------------------------------
# ergodic gap


def fixed_param_linear_run(seed, method="ppa", iters=512, factor=1.3):
    lin = generate_linear_instance(2, 5, seed=seed)
    p = linear_problem(lin)
    w_star = oracle_solve_linear(lin)
    jn = spectral_norm(lin.C)
    r = s = factor * jn
    if method == "ppa":
        cfg = RelaxedPpaConfig(
            gamma=1.5, tau=1e-300, max_iters=iters, param_mode="fixed",
            fixed_r=r, fixed_s=s, diagnostics=True,
        )
        _, trace = run_relaxed_ppa(p, cfg)
    else:
        cfg = PcConfig(
            gamma=1.0, tau=1e-300, max_iters=iters, param_mode="fixed",
            fixed_r=r, fixed_s=s, diagnostics=True,
        )
        _, trace = run_pc(p, cfg)
    return p, trace, w_star


def test_ergodic_gap_single_iteration():
    p, trace, w_star = fixed_param_linear_run(0, iters=1)
    series = check_ergodic_gap(trace, w_star, "ppa", p)
    assert len(series) == 1
    assert series[0].t == 0
    assert series[0].gap <= series[0].bound + 1e-8


@pytest.mark.parametrize("method", ["ppa", "pc"])
def test_ergodic_gap_bounded_on_linear_instances(method):
    p, trace, w_star = fixed_param_linear_run(1, method=method)
    series = check_ergodic_gap(trace, w_star, method, p)
    for pt in series:
        assert pt.gap <= pt.bound + 1e-8
        assert pt.gap >= -1e-10


def test_ergodic_gap_decays(active_pairs):
    p, trace, w_star = fixed_param_linear_run(3, iters=1024)
    series = check_ergodic_gap(trace, w_star, "ppa", p)
    gaps = [pt.gap for pt in series]
    for t in range(100, len(gaps) // 2):
        if gaps[t] > 1e-14:
            assert gaps[2 * t] <= 0.75 * gaps[t]


def test_ergodic_gap_refuses_adaptive_varying_jacobian(active_pairs):
    inst, w_star = active_pairs[0]
    p = qcqp_problem(inst)
    _, trace = run_relaxed_ppa(
        p, RelaxedPpaConfig(gamma=1.0, tau=1e-8, diagnostics=True)
    )
    with pytest.raises(InvalidParameterError, match="Jacobian varies"):
        check_ergodic_gap(trace, w_star, "ppa", p)


def test_ergodic_gap_mode_method_mismatch():
    p, trace, w_star = fixed_param_linear_run(0, iters=4)
    with pytest.raises(InvalidParameterError, match="does not match"):
        check_ergodic_gap(trace, w_star, "pc", p)


def test_gap_series_export(tmp_path):
    p, trace, w_star = fixed_param_linear_run(2, iters=32)
    series = check_ergodic_gap(trace, w_star, "ppa", p)
    path = tmp_path / "gap.csv"
    write_gap_series(series, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(series)
    assert float(rows[5]["gap"]) == series[5].gap


# ---------------------------------------------------------------------------
# monotonicity


def test_monotone_exactly_zero_for_linear_constraints():
    # the affine operator makes the form identically zero; only float
    # rounding of the two evaluations remains
    lin = generate_linear_instance(2, 4, seed=6)
    p = linear_problem(lin)
    report = check_monotone(p, samples=500, seed=0)
    assert abs(report.worst) <= 1e-12
    assert report.passed()


def test_monotone_nonnegative_for_qcqp():
    inst = generate_instance(3, 4, seed=19)
    p = qcqp_problem(inst)
    report = check_monotone(p, samples=2000, seed=1)
    assert report.worst >= -1e-10 * report.scale
    assert report.passed()
    assert report.samples == 2000


def test_monotone_form_zero_at_zero_multipliers():
    from ppapc.problem import monotone_operator

    inst = generate_instance(2, 3, seed=20)
    p = qcqp_problem(inst)
    rng = np.random.default_rng(2)
    for _ in range(10):
        w1 = PrimalDualPoint(rng.standard_normal(3), np.zeros(2))
        w2 = PrimalDualPoint(rng.standard_normal(3), np.zeros(2))
        form = (w1.w - w2.w) @ (monotone_operator(p, w1) - monotone_operator(p, w2))
        assert form == pytest.approx(0.0, abs=1e-12)
