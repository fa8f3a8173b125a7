import numpy as np
import pytest

from hamlb.certify import (
    CertificationError,
    certify,
    inject_deficit,
    shift_invariance_probe,
    trace_audit,
    verify_feasibility,
)
from hamlb.channels import CoarseGrainChannel
from hamlb.sdp import (
    AffineConstraint,
    BlockVarSpec,
    ChannelOp,
    SdpProblem,
    Term,
    TraceOp,
    build_lti,
    build_lti_single,
    build_mps_relaxation,
)
from hamlb.solver import SolverConfig, solve, solve_dense_small
from hamlb.umps import random_mps, to_left_gauge



@pytest.fixture(scope="module")
def lti_tfi4(tfi):
    prob = build_lti(tfi, 4)
    return prob, solve_dense_small(prob)


@pytest.fixture(scope="module")
def mps_tfi(tfi):
    mps = to_left_gauge(random_mps(2, 2, seed=11))
    prob = build_mps_relaxation(tfi, 8, mps)
    return prob, solve(prob, SolverConfig(eps_primal=1e-7, eps_dual=1e-7, eps_gap=1e-7, dual_stop=True))


def test_certified_below_raw_and_close(lti_tfi4):
    prob, sol = lti_tfi4
    cert = certify(prob, sol)
    assert cert.value <= cert.pre_certification_value
    assert cert.pre_certification_value - cert.value < 1e-8
    assert all(v >= -1e-12 for v in cert.margins.values())
    assert verify_feasibility(prob, cert.dual)["pass"]


def test_certification_is_idempotent(lti_tfi4, mps_tfi):
    for prob, sol in (lti_tfi4, mps_tfi):
        once = certify(prob, sol)
        twice = certify(prob, once.dual)
        assert abs(once.value - twice.value) < 1e-12


def test_mps_certificate(mps_tfi):
    prob, sol = mps_tfi
    cert = certify(prob, sol)
    assert cert.value <= sol.dual_objective
    assert set(cert.corrections) == {b.label for b in prob.blocks}
    # only the rows used for corrections need trace non-increasing maps
    corr = set(prob.correction_rows.values())
    flags = {k: v for k, v in cert.trace_flags.items() if k.split(":")[0] in corr}
    assert flags and all(f in ("preserving", "nonincreasing") for f in flags.values())


@pytest.mark.parametrize("delta", [1e-4, 1e-6])
def test_injected_deficit_bounded(lti_tfi4, mps_tfi, delta):
    for prob, sol in (lti_tfi4, mps_tfi):
        clean = certify(prob, sol)
        levels = len(prob.blocks)
        for blk in prob.blocks:
            y = inject_deficit(prob, clean.dual, blk.label, delta)
            hurt = certify(prob, y)
            assert clean.value - hurt.value <= levels * delta + 1e-10


def test_injection_lowers_target_slack(lti_tfi4):
    prob, sol = lti_tfi4
    clean = certify(prob, sol).dual
    y = inject_deficit(prob, clean, "rho4", 1e-4)
    before = prob.slacks(clean)["rho4"]
    after = prob.slacks(y)["rho4"]
    assert np.abs(after - before + 1e-4 * np.eye(16)).max() < 1e-14


def test_shift_invariance_of_translation_rows(tfi):
    prob = build_lti_single(tfi, 4)
    sol = solve_dense_small(prob)
    assert shift_invariance_probe(prob, sol, "lti", 0.37) < 1e-12
    mps = to_left_gauge(random_mps(2, 2, seed=1))
    mprob = build_mps_relaxation(tfi, 6, mps)
    y = {c.name: np.zeros((c.size, c.size)) for c in mprob.constraints}
    assert shift_invariance_probe(mprob, y, "lti_base", -1.3) < 1e-12


def test_loose_solve_is_repaired(tfi):
    prob = build_lti(tfi, 5)
    tight = certify(prob, solve_dense_small(prob)).value
    loose = solve(prob, SolverConfig(method="admm", eps_primal=1e-4, eps_dual=1e-4, eps_gap=1e-4))
    cert = certify(prob, loose)
    assert cert.value <= tight + 1e-10
    assert tight - cert.value < 1e-2
    assert max(cert.corrections.values()) < 1e-2


def _toy(cone="psd", scale=1.0):
    small = BlockVarSpec("a", (2,))
    big = BlockVarSpec("b", (2, 2), level=1, cone=cone)
    ch = CoarseGrainChannel(scale * np.eye(2)[None], (2,), label="S")
    norm = AffineConstraint("norm", "normalization", (Term.make("a", (2,), (TraceOp((0,)),)),), np.ones((1, 1)))
    link = AffineConstraint("link", "link", (Term.make("a", (2,), (ChannelOp(ch, 0, 1),)), Term.make("b", (2, 2), (TraceOp((1,)),), -1.0)))
    return SdpProblem("toy", [small, big], [norm, link], {"a": np.diag([1.0, -1.0])}, "a", {"b": "link"})


def test_toy_problem_certifies():
    prob = _toy()
    cert = certify(prob, {"norm": np.full((1, 1), -1.0), "link": np.zeros((2, 2))})
    assert abs(cert.value + 1) < 1e-12
    assert trace_audit(prob) == {"link:S": "preserving"}


def test_free_blocks_refused():
    with pytest.raises(CertificationError):
        certify(_toy(cone="free"), {"norm": np.zeros((1, 1)), "link": np.zeros((2, 2))})


def test_trace_increasing_channel_refused():
    prob = _toy(scale=1.5)
    assert trace_audit(prob) == {"link:S": "general"}
    with pytest.raises(CertificationError):
        certify(prob, {"norm": np.zeros((1, 1)), "link": -np.eye(2)})


def test_result_serializes(lti_tfi4, tmp_path):
    prob, sol = lti_tfi4
    cert = certify(prob, sol)
    text = cert.to_json(tmp_path / "c.json")
    assert '"pre_certification_value"' in text
    assert (tmp_path / "c.json").exists()
