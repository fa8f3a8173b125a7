import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamlb.ipm import dense_matrix, dense_size
from hamlb.sdp import AffineConstraint, BlockVarSpec, SdpProblem, Term, TraceOp, build_lti, build_lti_single
from hamlb.solver import (
    AffineProjector,
    SolverConfig,
    coords_to_herm,
    herm_to_coords,
    project_cone,
    project_psd_sectors,
    residuals,
    solve,
    solve_dense_small,
)
from hamlb.tensor import inner, random_hermitian

TIGHT = SolverConfig(eps_primal=1e-10, eps_dual=1e-10, eps_gap=1e-10)


def _min_eig_problem(c):
    """min <C, X> over states X; the optimum is the lowest eigenvalue of C."""
    n = c.shape[0]
    blk = BlockVarSpec("x", (n,))
    row = AffineConstraint("norm", "normalization", (Term.make("x", (n,), (TraceOp((0,)),)),), np.ones((1, 1)))
    return SdpProblem("mineig", [blk], [row], {"x": c}, "x")


def test_diagonal_example():
    prob = _min_eig_problem(np.diag([1.0, -1.0]))
    for method in ("admm", "ipm"):
        sol = solve(prob, SolverConfig(method=method))
        assert abs(sol.dual_objective + 1) < 1e-7
        assert abs(sol.primal["x"][1, 1] - 1) < 1e-6


@settings(max_examples=15)
@given(st.integers(0, 2**31 - 1), st.booleans())
def test_min_eigenvalue_oracle(seed, real):
    rng = np.random.default_rng(seed)
    c = random_hermitian(5, rng, real=real)
    prob = _min_eig_problem(c)
    sol = solve(prob, TIGHT)
    assert sol.status in ("optimal", "dual_optimal")
    assert abs(sol.dual_objective - np.linalg.eigvalsh(c)[0]) < 1e-7


def test_residuals_of_exact_point():
    c = np.diag([2.0, -0.5, 1.0])
    prob = _min_eig_problem(c)
    x = {"x": np.diag([0.0, 1.0, 0.0])}
    y = {"norm": np.full((1, 1), -0.5)}
    assert max(residuals(prob, x, y)) < 1e-15
    # a dual point pushed down by delta stays feasible and opens a gap of order delta
    delta = 1e-3
    rp, rd, gap = residuals(prob, x, {"norm": np.full((1, 1), -0.5 - delta)})
    assert rp == 0 and rd == 0
    assert delta / 3 < gap < delta
    rp, rd, gap = residuals(prob, x, {"norm": np.full((1, 1), -0.5 + delta)})
    assert abs(rd - delta) < 1e-12


@settings(max_examples=25)
@given(st.integers(0, 2**31 - 1), st.floats(0, 2))
def test_weak_duality(seed, t):
    rng = np.random.default_rng(seed)
    c = random_hermitian(4, rng, real=True)
    prob = _min_eig_problem(c)
    x = prob.identity_point()
    y = {"norm": np.full((1, 1), np.linalg.eigvalsh(c)[0] - t)}
    assert residuals(prob, x, y)[1] < 1e-12
    assert prob.dual_objective(y) <= prob.primal_objective(x) + 1e-12


def test_admm_and_ipm_agree(heis):
    prob = build_lti(heis, 5)
    a = solve(prob, SolverConfig(method="admm", eps_primal=1e-9, eps_dual=1e-9, eps_gap=1e-9))
    b = solve(prob, SolverConfig(method="ipm"))
    assert a.status in ("optimal", "dual_optimal")
    assert b.status in ("optimal", "dual_optimal")
    assert abs(a.dual_objective - b.dual_objective) < 1e-6


def test_objective_scaling_invariance(tfi):
    prob = build_lti_single(tfi, 4)
    v = solve_dense_small(prob).dual_objective
    scaled = SdpProblem(prob.name, prob.blocks, prob.constraints, {k: 7.5 * c for k, c in prob.objective.items()}, prob.normalization)
    assert abs(solve_dense_small(scaled).dual_objective - 7.5 * v) < 1e-7


def test_max_iters_status(tfi):
    sol = solve(build_lti(tfi, 5), SolverConfig(method="admm", max_iters=3, check_every=1))
    assert sol.status == "max_iters"
    assert sol.iterations <= 3


def test_warm_start_converges_fast(tfi):
    prob = build_lti(tfi, 5)
    cfg = SolverConfig(method="admm", eps_primal=1e-8, eps_dual=1e-8, eps_gap=1e-8)
    cold = solve(prob, cfg)
    warm = solve(prob, cfg, warm_start=cold)
    assert warm.iterations <= cold.iterations
    assert abs(warm.dual_objective - cold.dual_objective) < 1e-7


@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.booleans())
def test_coordinate_roundtrip(seed, n, real):
    m = random_hermitian(n, np.random.default_rng(seed), real=real)
    v = herm_to_coords(m, real)
    assert len(v) == (n * (n + 1) // 2 if real else n * n)
    assert abs(v @ v - inner(m, m)) < 1e-10
    assert np.abs(coords_to_herm(v, n, real) - m).max() < 1e-14


def test_dense_matrix_matches_apply(rng, heis):
    prob = build_lti(heis, 4)
    a, b, c = dense_matrix(prob)
    assert a.shape == dense_size(prob)
    x = {blk.label: random_hermitian(blk.dim, rng, real=True) for blk in prob.blocks}
    xv = np.concatenate([herm_to_coords(x[l], True) for l in prob.labels])
    ax = prob.apply_A(x)
    av = np.concatenate([herm_to_coords(ax[r.name], True) for r in prob.constraints])
    assert np.abs(a @ xv - av).max() < 1e-12
    assert abs(c @ xv - prob.primal_objective(x)) < 1e-12


@settings(max_examples=20)
@given(st.integers(0, 2**31 - 1))
def test_projections_idempotent(seed):
    rng = np.random.default_rng(seed)
    prob = build_lti(__import__("hamlb").build_model("tfi"), 4)
    x = {b.label: random_hermitian(b.dim, rng, real=True) for b in prob.blocks}
    once = project_cone(prob, x)
    twice = project_cone(prob, once)
    assert max(np.abs(once[k] - twice[k]).max() for k in once) < 1e-12
    proj = AffineProjector(prob, SolverConfig())
    a1 = proj(x)
    a2 = proj(a1)
    assert max(np.abs(a1[k] - a2[k]).max() for k in a1) < 1e-12
    r = prob.apply_A(a1)
    b = prob.rhs()
    assert max(np.abs(r[k] - b[k]).max() for k in r) < 1e-12


def test_sector_projection(rng):
    m = random_hermitian(4, rng, real=True)
    sectors = (np.array([0, 3]), np.array([1, 2]))
    p = project_psd_sectors(m, sectors)
    assert p[0, 1] == 0 and p[3, 2] == 0
    assert np.linalg.eigvalsh(p)[0] > -1e-12
    assert np.abs(project_psd_sectors(p, sectors) - p).max() < 1e-12


def test_dense_small_size_guard(tfi):
    with pytest.raises(ValueError):
        solve_dense_small(build_lti(tfi, 8))


def test_dense_small_heisenberg_four(heis):
    sol = solve_dense_small(build_lti(heis, 4))
    assert sol.status == "optimal"
    assert abs(sol.dual_objective + 0.5) < 1e-8


def test_config_validation():
    for bad in ({"eps_primal": 0}, {"scaling": "cholesky"}, {"alpha": 2.0}, {"method": "simplex"}):
        with pytest.raises(ValueError):
            SolverConfig(**bad)
