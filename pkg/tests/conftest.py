"""Shared instance factories for the test suite."""

import numpy as np
import pytest

from ppapc.qcqp import QcqpInstance, generate_instance, oracle_solve


def shrink_constraints(inst, shrink=0.35):
    """Rescale the constraint bounds so the unconstrained minimizer is
    infeasible, which makes constraints active at the optimum."""
    resid = inst.B @ inst.least_squares_x - inst.b
    ref = np.einsum("ij,ij->i", resid, resid)
    c = np.maximum(shrink * ref, 1e-2)
    return QcqpInstance(inst.A, inst.a, inst.B, inst.b, c, seed=inst.seed)


def certified_active_instances(count, m=2, n=4, shrink=0.6, start_seed=0):
    """Active-constraint instances whose ground truth the oracle certifies.

    Instances where the shrunken feasible set turns out empty (the oracle
    finds no certified KKT point) or where the multipliers blow up (nearly
    degenerate feasible sets, hopeless for first-order solvers at test
    budgets) are skipped.
    """
    out = []
    seed = start_seed
    while len(out) < count and seed < start_seed + 400:
        inst = shrink_constraints(generate_instance(m, n, seed), shrink)
        try:
            w_star = oracle_solve(inst)
        except Exception:
            seed += 1
            continue
        if np.max(w_star.lam, initial=0.0) > 20.0:
            seed += 1
            continue
        out.append((inst, w_star))
        seed += 1
    if len(out) < count:
        raise RuntimeError("could not certify enough active instances")
    return out


@pytest.fixture(scope="session")
def active_pairs():
    """Ten oracle-certified tiny instances with active constraints."""
    return certified_active_instances(10)
