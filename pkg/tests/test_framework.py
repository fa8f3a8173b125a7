import numpy as np
import pytest

from hamlb.framework import (
    EnsembleDilationChain,
    IntertwiningLevel,
    MarginalScenario,
    check_intertwining,
    mps_chain,
    relaxation_steps_trace,
    ttn_chain,
)
from hamlb.ttn import TreeStack, optimize_tree
from hamlb.umps import random_mps, to_left_gauge


def _stack(rng, dims):
    layers = []
    for l in range(1, len(dims)):
        q = np.linalg.qr(rng.standard_normal((dims[l - 1] ** 2, dims[l])))[0]
        layers.append(q.T)
    return TreeStack(layers, dims)


@pytest.mark.parametrize("real", [True, False])
def test_mps_chain_commutes(real):
    mps = to_left_gauge(random_mps(2, 2, seed=4, real=real))
    chain = mps_chain(mps, 3, 7)
    assert sorted(chain.levels) == [4, 5, 6, 7]
    for m in chain.levels:
        assert check_intertwining(chain, m, probes=3) < 1e-12


def test_ttn_chain_commutes(rng, tfi):
    for stack in (_stack(rng, [2, 3, 2, 1]), optimize_tree(tfi, 3, 2, sweeps=5)):
        chain = ttn_chain(stack, stack.levels)
        for m in chain.levels:
            assert check_intertwining(chain, m, probes=3) < 1e-10


def test_mismatched_maps_are_detected():
    a = mps_chain(to_left_gauge(random_mps(2, 2, seed=1)), 3, 5)
    b = mps_chain(to_left_gauge(random_mps(2, 2, seed=2)), 3, 5)
    la, lb = a.level(5)[0], b.level(5)[0]
    bad = IntertwiningLevel("bad", la.fine_dims, la.lhs, lb.rhs)
    chain = EnsembleDilationChain("mps", [], {5: [bad]})
    assert check_intertwining(chain, 5) > 1e-3


def test_steps_trace():
    mps = to_left_gauge(random_mps(2, 2, seed=1))
    rec = relaxation_steps_trace(mps_chain(mps, 3, 5), 5)
    assert rec["kind"] == "mps" and len(rec["steps"]) == 4
    assert len(rec["rows"]) == 2
    assert rec["blocks"] == ["omega4", "omega5"]
    rec = relaxation_steps_trace(ttn_chain(_stack(np.random.default_rng(0), [2, 2, 2, 1]), 3), 1)
    assert len(rec["rows"]) == 3
    assert rec["blocks"] == ["omega2"]


def test_missing_level():
    chain = mps_chain(to_left_gauge(random_mps(2, 2, seed=1)), 3, 4)
    with pytest.raises(KeyError):
        chain.level(9)


def test_scenario_ordering():
    al = {i: 2 for i in range(4)}
    three = MarginalScenario(al, ((0, 1, 2), (1, 2, 3)))
    two = MarginalScenario(al, ((0, 1), (1, 2), (2, 3)))
    four = MarginalScenario(al, ((0, 1, 2, 3),))
    assert two <= three <= four
    assert not four <= three
    assert three.dims((0, 1)) == (2, 2)
    with pytest.raises(ValueError):
        MarginalScenario(al, ((0, 7),))
