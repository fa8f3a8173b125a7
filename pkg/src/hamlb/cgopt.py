"""Coordinate ascent on the tree coarse-graining channels.

With the multiplier ``lam`` of one linkage row held fixed, the dual of the
tree relaxation splits: blocks deeper than the row keep their old multipliers
and stay feasible, while the shallow part becomes a small SDP in which the
channel of that row enters linearly through its Choi matrix ``J``::

    max eps  s.t.  H - eps I - L^*(X) - cg_J^*(lam) >= 0,  J >= 0,  tr_out J = I

The pair map ``(W' (x) W'' + W'' (x) W') / 2`` is linear in ``W'`` for fixed
``W''``, so the two factors are updated alternately. The SDP is handed to the
conic solver in primal form; its Choi row multiplier is the new ``J``.
"""

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .channels import CoarseGrainChannel, from_choi, make_trace_preserving, symmetrized_pair_channel
from .sdp import AffineConstraint, BlockVarSpec, EmbedOp, SdpProblem, Term, build_ttn_relaxation
from .solver import SolverConfig, solve
from .tensor import apply_kraus, hermitize, partial_trace, project_psd

STALL_TOL = 1e-10


@dataclass
class ChoiBlock:
    """Choi matrix on ``in (x) out`` of a map ``X -> tr_in[(X^T (x) I) J]``."""

    matrix: np.ndarray
    in_dim: int
    out_dim: int

    @property
    def psd_margin(self):
        return float(np.linalg.eigvalsh(hermitize(self.matrix))[0])

    @property
    def tp_error(self):
        m = partial_trace(self.matrix, (self.in_dim, self.out_dim), [1])
        return float(np.abs(m - np.eye(self.in_dim)).max())

    def to_channel(self, in_dims=None, label="Wopt"):
        """Nearest CPTP channel: PSD projection followed by trace-preserving rescaling."""
        j = project_psd(hermitize(self.matrix))
        j = make_trace_preserving(j, self.in_dim, self.out_dim)
        ch = from_choi(j, self.in_dim, self.out_dim, in_dims)
        return CoarseGrainChannel(ch.kraus, ch.in_dims, label=label)


@dataclass(frozen=True)
class ChoiGradientOp:
    """Linear map ``rho -> F(rho)`` with ``<F(rho), Z> = <cg_Z(rho), lam>``.

    ``cg_Z = (W_Z (x) W'' + W'' (x) W_Z) / 2`` acts on four sites of ``rho``
    (two pairs); ``W_Z`` is the map with Choi matrix ``Z``. The adjoint is
    ``Z -> cg_Z^*(lam)``.
    """

    other: CoarseGrainChannel
    lam: np.ndarray
    in_dim: int
    out_dim: int

    def out_dims(self, dims):
        if int(np.prod(dims)) != self.in_dim**2:
            raise ValueError("block does not hold two pairs of the channel input")
        return (self.in_dim, self.out_dim)

    def _pairs(self, dims):
        return (self.in_dim, self.in_dim)

    def forward(self, m, dims):
        n, o = self.in_dim, self.out_dim
        lam = self.lam.reshape(o, o, o, o)
        # W'' on the second pair: sigma[i, c, j, e]
        s1 = apply_kraus(self.other.kraus, m, (n, n), 1, 2).reshape(n, o, n, o)
        k1 = np.einsum("icje,beac->iajb", s1, lam)
        # W'' on the first pair: sigma[c, i, e, j]
        s2 = apply_kraus(self.other.kraus, m, (n, n), 0, 1).reshape(o, n, o, n)
        k2 = np.einsum("ciej,ebca->iajb", s2, lam)
        k = ((k1 + k2) / 2).reshape(n * o, n * o)
        return hermitize(k.T)

    def adjoint(self, z, dims):
        n, o = self.in_dim, self.out_dim
        zc = z.conj().reshape(n, o, n, o)
        kd = np.conj(np.transpose(self.other.kraus, (0, 2, 1)))
        # (W_Z (x) W'')^* lam: first undo W'' on the second output site
        mu1 = apply_kraus(kd, self.lam, (o, o), 1, 2).reshape(o, n, o, n)
        r1 = np.einsum("iajb,acbe->icje", zc, mu1)
        mu2 = apply_kraus(kd, self.lam, (o, o), 0, 1).reshape(n, o, n, o)
        r2 = np.einsum("iajb,caeb->ciej", zc, mu2)
        return hermitize(((r1 + r2) / 2).reshape(n * n, n * n))

    def describe(self):
        return "choi-grad"


def coordinate_problem(problem, dual, level, other):
    """Shallow SDP for the channel feeding ``omega{level}`` with the other factor fixed.

    Returns an :class:`SdpProblem` whose ``choi`` row multiplier is the new
    Choi matrix.
    """
    link = problem.row(f"link{level}")
    target = f"omega{level}"
    prev_term = [t for t in link.terms if t.block != target][0]
    deep_level = problem.block(target).level
    # the new channel need not respect a charge, so sectors are dropped
    shallow = [replace(b, sectors=None) for b in problem.blocks if b.level < deep_level]
    names = {b.label for b in shallow}
    rows = [c for c in problem.constraints if c.name != link.name and all(t.block in names for t in c.terms)]
    n, o = other.in_dim, other.out_dim
    lam = hermitize(dual[link.name])
    op = ChoiGradientOp(other, lam, n, o)
    y_blk = BlockVarSpec("Y", (n,), level=deep_level, cone="free")
    g_blk = BlockVarSpec("Gamma", (n, o), level=deep_level)
    prev = problem.block(prev_term.block)
    rows.append(
        AffineConstraint(
            "choi",
            "link",
            (
                Term.make(prev.label, prev.dims, (op,)),
                Term.make("Y", y_blk.dims, (EmbedOp((o,)),), -1.0),
                Term.make("Gamma", g_blk.dims, (), -1.0),
            ),
        )
    )
    obj = dict(problem.objective)
    obj["Y"] = -np.eye(n)
    corr = {k: v for k, v in problem.correction_rows.items() if k in names}
    meta = dict(problem.meta, coordinate_level=level)
    return SdpProblem(f"{problem.name}-cd{level}", shallow + [y_blk, g_blk], rows, obj, problem.normalization, corr, meta)


@dataclass
class CoordinateResult:
    problem: SdpProblem
    solution: object
    pairs: dict
    factors: dict
    history: list = field(default_factory=list)


def _certified(problem, sol):
    """Certified value of a solve, ``-inf`` when no certificate can be built."""
    from .certify import CertificationError, certify

    try:
        return certify(problem, sol).value
    except CertificationError:
        return -np.inf


def improve_maps(spec, N, stack, config=None, sweeps=3, schedule=None, trace=None):
    """Alternating improvement of the tree channels of a tree relaxation.

    Parameters
    ----------
    spec : HamiltonianSpec
    N : int
        ``2**N`` sites.
    stack : TreeStack
    config : SolverConfig, optional
    sweeps : int
        Sweeps over the schedule; stops early after 3 sweeps with total gain
        below ``1e-10``.
    schedule : list of int, optional
        Linkage levels to update, deepest first by default.
    trace : str, optional
        CSV path for the history ``(step, level, factor, dual_objective, accepted)``.

    Returns
    -------
    CoordinateResult
        The history holds the certified dual objective of the full relaxation
        after every step. A step is kept only if it does not lower the
        certified value; rejected steps repeat the previous value.
    """
    from .ttn import cptp_layers

    cfg = config or SolverConfig(eps_primal=1e-9, eps_dual=1e-9, eps_gap=1e-9)
    layers = cptp_layers(stack, N - 2)
    levels = schedule or list(range(N - 1, 1, -1))
    factors = {m: [layers[m - 2].channel, layers[m - 2].channel] for m in levels}
    pairs = {}
    problem = build_ttn_relaxation(spec, N, stack, pairs)
    sol = solve(problem, cfg)
    best = _certified(problem, sol)
    history = [{"step": 0, "level": 0, "factor": -1, "dual_objective": best, "accepted": True}]
    step = 0
    stall = 0
    for _ in range(sweeps):
        gain = 0.0
        for m in levels:
            for f in (0, 1):
                step += 1
                other = factors[m][1 - f]
                sub = coordinate_problem(problem, sol.dual, m, other)
                sub_sol = solve(sub, cfg)
                new = ChoiBlock(sub_sol.dual["choi"], other.in_dim, other.out_dim).to_channel(other.in_dims)
                cand = list(factors[m])
                cand[f] = new
                cand_pairs = dict(pairs)
                cand_pairs[m] = symmetrized_pair_channel(cand[0], cand[1])
                cand_problem = build_ttn_relaxation(spec, N, stack, cand_pairs)
                cand_sol = solve(cand_problem, cfg)
                value = _certified(cand_problem, cand_sol)
                ok = value >= best
                if ok:
                    gain += value - best
                    best = value
                    factors[m], pairs, problem, sol = cand, cand_pairs, cand_problem, cand_sol
                history.append({"step": step, "level": m, "factor": f, "dual_objective": best, "accepted": bool(ok)})
        stall = stall + 1 if gain < STALL_TOL else 0
        if stall >= 3:
            break
    if trace:
        with open(trace, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["step", "level", "factor", "dual_objective", "accepted"])
            w.writeheader()
            w.writerows(history)
    return CoordinateResult(problem, sol, pairs, factors, history)
