import numpy as np
import pytest

from hamlb.models import averaged_base_term, build_model
from hamlb.sdp import (
    MAX_SIDE,
    ShiftGramSolver,
    adjoint_probe,
    build_lti,
    build_lti_single,
    build_mps_relaxation,
    build_ttn_relaxation,
    build_two_lti_eight,
    default_base_size,
    identity_residual,
    scaled_problem,
)
from hamlb.solver import DenseGramSolver, SolverConfig, solve, solve_dense_small
from hamlb.tensor import random_hermitian
from hamlb.ttn import TreeStack
from hamlb.umps import random_mps, to_left_gauge


def _stack(rng, dims):
    layers = []
    for l in range(1, len(dims)):
        q = np.linalg.qr(rng.standard_normal((dims[l - 1] ** 2, dims[l])))[0]
        layers.append(q.T)
    return TreeStack(layers, dims)


def _witness_residual(problem, x):
    ax = problem.apply_A(x)
    b = problem.rhs()
    return max(np.abs(ax[k] - b[k]).max() for k in ax)


def _problems(tfi, heis):
    rng = np.random.default_rng(7)
    mps_r = to_left_gauge(random_mps(2, 2, seed=1))
    mps_c = to_left_gauge(random_mps(2, 2, seed=2, real=False))
    return {
        "lti": build_lti(tfi, 5),
        "lti-single": build_lti_single(heis, 5),
        "mps": build_mps_relaxation(tfi, 8, mps_r),
        "mps-complex": build_mps_relaxation(heis, 7, mps_c),
        "ttn": build_ttn_relaxation(tfi, 4, _stack(rng, [2, 2, 2, 1])),
        "ttn-D3": build_ttn_relaxation(heis, 3, _stack(rng, [2, 3, 1])),
        "two-lti": build_two_lti_eight(tfi),
    }


def test_adjoint_probes(tfi, heis):
    for name, prob in _problems(tfi, heis).items():
        assert adjoint_probe(prob, seed=3) < 1e-10, name


def test_witnesses_are_feasible(tfi, heis):
    for name, prob in _problems(tfi, heis).items():
        x = prob.witness() if callable(getattr(prob, "witness", None)) else prob.identity_point()
        assert _witness_residual(prob, x) < 1e-10, name
        for lab, m in x.items():
            assert np.linalg.eigvalsh(m)[0] > 0, (name, lab)


def test_identity_point_feasible_for_lti(tfi):
    assert identity_residual(build_lti(tfi, 6)) < 1e-14
    assert identity_residual(build_lti_single(tfi, 6)) < 1e-14


def test_lti_block_layout(tfi):
    prob = build_lti(tfi, 5)
    assert prob.labels == ["rho2", "rho3", "rho4", "rho5"]
    assert prob.correction_rows == {"rho5": "lti5R", "rho4": "lti4R", "rho3": "lti3R"}
    st = prob.stats()
    assert st["blocks"] == 4
    assert st["scalars"] == sum(2**m * (2**m + 1) // 2 for m in range(2, 6))
    assert st["largest_block"] == 32
    assert prob.to_dict()["normalization"] == "rho2"


def test_two_site_lti_values(tfi, heis):
    # two-site marginals with equal one-site reductions: the minimum is the
    # lowest eigenvalue of the symmetric two-site term
    for spec in (tfi, heis):
        h = averaged_base_term(spec, 2)
        sol = solve_dense_small(build_lti(spec, 2))
        assert abs(sol.dual_objective - np.linalg.eigvalsh(h)[0]) < 1e-8
    assert abs(solve_dense_small(build_lti(heis, 2)).dual_objective + 0.75) < 1e-8


def test_single_form_matches_chain_form(tfi):
    a = solve_dense_small(build_lti(tfi, 5)).dual_objective
    b = solve_dense_small(build_lti_single(tfi, 5)).dual_objective
    assert abs(a - b) < 1e-8


def test_shift_gram_solver_matches_dense(rng, heis):
    prob = build_lti_single(heis, 4)
    dense = DenseGramSolver(prob)
    assert isinstance(prob.gram_solver, ShiftGramSolver)
    ax = prob.apply_A({"rho4": random_hermitian(16, rng, real=True)})
    w1, w2 = prob.gram_solver(ax), dense(ax)
    assert max(np.abs(w1[k] - w2[k]).max() for k in w1) < 1e-10


def test_mps_relaxation_between_lti_values(tfi):
    mps = to_left_gauge(random_mps(2, 2, seed=5))
    prob = build_mps_relaxation(tfi, 6, mps)
    k0 = prob.meta["k0"]
    assert k0 == default_base_size(2, 2, 2, 6) == 4
    cfg = SolverConfig(eps_primal=1e-9, eps_dual=1e-9, eps_gap=1e-9)
    v = solve(prob, cfg).dual_objective
    lo = solve_dense_small(build_lti(tfi, k0)).dual_objective
    hi = solve_dense_small(build_lti(tfi, 6)).dual_objective
    assert lo - 1e-7 <= v <= hi + 1e-7


def test_scaled_problem_same_optimum(heis):
    prob = build_lti(heis, 4)
    sp = scaled_problem(prob, {"rho3": 0.5, "rho4": 0.25})
    assert adjoint_probe(sp) < 1e-10
    a = solve_dense_small(prob).dual_objective
    b = solve_dense_small(sp).dual_objective
    assert abs(a - b) < 1e-8


def test_two_lti_eight_layout(tfi):
    prob = build_two_lti_eight(tfi)
    assert [b.dim for b in prob.blocks] == [16, 256]
    assert prob.correction_rows == {"sigma": "link8"}


def test_ttn_charge_sectors(heis, tfi):
    rng = np.random.default_rng(0)
    prob = build_ttn_relaxation(tfi, 3, _stack(rng, [2, 2, 1]))
    assert prob.block("rho").sectors is not None
    # a random layer does not respect the charge, so omega carries no sectors
    assert prob.block("omega2").sectors is None


def test_builder_errors(tfi):
    big = build_model("tfi")
    with pytest.raises(ValueError):
        build_lti(tfi, 1)
    with pytest.raises(ValueError):
        build_lti(big, int(np.log2(MAX_SIDE)) + 1)
    mps = random_mps(2, 2, seed=0)
    with pytest.raises(ValueError):
        build_mps_relaxation(tfi, 8, mps)
    with pytest.raises(ValueError):
        build_mps_relaxation(tfi, 4, to_left_gauge(mps), base_size=4)
    with pytest.raises(ValueError):
        build_ttn_relaxation(tfi, 2, _stack(np.random.default_rng(0), [2, 2, 1]))


def test_cvxpy_oracle_lti(tfi):
    cp = pytest.importorskip("cvxpy")
    n = 4
    h = averaged_base_term(tfi, 2)
    rho = cp.Variable((2**n, 2**n), symmetric=True)
    cons = [rho >> 0, cp.trace(rho) == 1]
    left = cp.partial_trace(rho, [2] * n, axis=0)
    right = cp.partial_trace(rho, [2] * n, axis=n - 1)
    cons.append(left == right)
    two = rho
    for ax in range(n - 1, 1, -1):
        two = cp.partial_trace(two, [2] * (ax + 1), axis=ax)
    prob = cp.Problem(cp.Minimize(cp.trace(h @ two)), cons)
    prob.solve(solver=cp.CLARABEL)
    ours = solve_dense_small(build_lti(tfi, n)).dual_objective
    assert abs(prob.value - ours) < 1e-6
