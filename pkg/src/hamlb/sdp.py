"""Block SDPs with matrix-free affine constraints.

Every problem has the primal form

    minimize    sum_b <C_b, X_b>
    subject to  sum_b L_rb(X_b) = B_r   for every row r,
                X_b PSD (or unconstrained for free blocks),

where each ``L_rb`` is a chain of local channel applications and partial
traces. The dual reads ``max sum_r <B_r, Y_r>`` subject to the slacks
``S_b = C_b - sum_r L_rb^*(Y_r)`` being PSD. The normalization row carries
the scalar multiplier ``eps`` and the dual objective equals ``eps``.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .channels import CoarseGrainChannel
from .models import averaged_base_term, charge_sectors, conserved_charge, induced_charge, sectors_from_charge
from .tensor import apply_kraus, hermitize, inner, partial_trace, random_hermitian

MAX_SIDE = 2**13


# ---------------------------------------------------------------------------
# linear-map descriptors


@dataclass(frozen=True)
class ChannelOp:
    """Apply ``channel`` to sites ``start:stop`` (they merge into one site)."""

    channel: CoarseGrainChannel
    start: int
    stop: int

    def out_dims(self, dims):
        joint = int(np.prod(dims[self.start : self.stop]))
        if joint != self.channel.in_dim:
            raise ValueError(f"channel input {self.channel.in_dim} does not match sites {dims[self.start:self.stop]}")
        return dims[: self.start] + (self.channel.out_dim,) + dims[self.stop :]

    def forward(self, m, dims):
        return apply_kraus(self.channel.kraus, m, dims, self.start, self.stop)

    def adjoint(self, y, dims):
        out = self.out_dims(dims)
        kd = np.conj(np.transpose(self.channel.kraus, (0, 2, 1)))
        return apply_kraus(kd, y, out, self.start, self.start + 1)

    def describe(self):
        return f"{self.channel.label or 'cg'}[{self.start}:{self.stop}]"


@dataclass(frozen=True)
class EmbedOp:
    """``Y -> Y (x) I`` with ``extra`` identity sites appended (adjoint of a trailing partial trace)."""

    extra: tuple

    def out_dims(self, dims):
        return tuple(dims) + tuple(self.extra)

    def forward(self, m, dims):
        return np.kron(m, np.eye(int(np.prod(self.extra)), dtype=m.dtype))

    def adjoint(self, y, dims):
        n = len(dims)
        return partial_trace(y, tuple(dims) + tuple(self.extra), tuple(range(n, n + len(self.extra))))

    def describe(self):
        return "emb"


@dataclass(frozen=True)
class TraceOp:
    """Partial trace over ``sites`` (all sites gives a 1x1 matrix)."""

    sites: tuple

    def out_dims(self, dims):
        kept = tuple(d for i, d in enumerate(dims) if i not in self.sites)
        return kept if kept else (1,)

    def forward(self, m, dims):
        if len(self.sites) == len(dims):
            return np.trace(m).reshape(1, 1)
        return partial_trace(m, dims, self.sites)

    def adjoint(self, y, dims):
        """Tensor ``y`` with identities on the traced sites."""
        n = len(dims)
        traced = sorted(self.sites)
        size = int(np.prod(dims))
        if len(traced) == n:
            return y[0, 0] * np.eye(size, dtype=y.dtype)
        # contiguous traced prefix/suffix: plain block structure
        if traced == list(range(len(traced))) or traced == list(range(n - len(traced), n)):
            td = int(np.prod([dims[i] for i in traced]))
            kd = size // td
            eye = np.eye(td, dtype=y.dtype)
            if traced[0] == 0:
                t = eye[:, None, :, None] * y[None, :, None, :]
            else:
                t = y[:, None, :, None] * eye[None, :, None, :]
            return t.reshape(size, size)
        kept = [i for i in range(n) if i not in traced]
        td = int(np.prod([dims[i] for i in traced]))
        full = np.kron(y, np.eye(td, dtype=y.dtype))
        order = kept + traced
        pd = [dims[i] for i in order]
        t = full.reshape(pd + pd)
        inv = np.argsort(order)
        t = t.transpose(list(inv) + [n + i for i in inv])
        return t.reshape(size, size)

    def describe(self):
        return "tr" + "".join(str(s) for s in self.sites)


@dataclass(frozen=True)
class Term:
    """``coef * ops(X_block)``; ``ops`` act left to right on the block."""

    block: str
    ops: tuple
    coef: float
    dims_chain: tuple  # dims before each op plus the final dims

    @classmethod
    def make(cls, block, dims, ops=(), coef=1.0):
        chain = [tuple(dims)]
        for op in ops:
            chain.append(op.out_dims(chain[-1]))
        return cls(block, tuple(ops), float(coef), tuple(chain))

    @property
    def out_dims(self):
        return self.dims_chain[-1]

    def forward(self, m):
        for op, dims in zip(self.ops, self.dims_chain):
            m = op.forward(m, dims)
        return self.coef * m

    def adjoint(self, y):
        for op, dims in zip(reversed(self.ops), reversed(self.dims_chain[:-1])):
            y = op.adjoint(y, dims)
        return self.coef * y

    @property
    def channels(self):
        return [op.channel for op in self.ops if isinstance(op, ChannelOp)]

    @property
    def is_pure_trace(self):
        return all(isinstance(op, TraceOp) for op in self.ops)

    def describe(self):
        chain = " ".join(op.describe() for op in reversed(self.ops))
        sign = "-" if self.coef < 0 else "+"
        return f"{sign}{abs(self.coef):g}*{chain + ' ' if chain else ''}{self.block}"


@dataclass(frozen=True, eq=False)
class AffineConstraint:
    """Row ``sum(terms) = b``; ``b`` defaults to zero."""

    name: str
    kind: str  # normalization | lti | link
    terms: tuple
    b: np.ndarray = None

    def __post_init__(self):
        outs = {t.out_dims for t in self.terms}
        sizes = {int(np.prod(o)) for o in outs}
        if len(sizes) != 1:
            raise ValueError(f"row {self.name}: terms map to different spaces {outs}")

    @property
    def out_dims(self):
        return self.terms[0].out_dims

    @property
    def size(self):
        return int(np.prod(self.out_dims))

    def forward(self, blocks):
        out = 0
        for t in self.terms:
            out = out + t.forward(blocks[t.block])
        return out

    def rhs(self, dtype=float):
        if self.b is None:
            return np.zeros((self.size, self.size), dtype=dtype)
        return self.b

    def describe(self):
        return " ".join(t.describe() for t in self.terms) + (" = B" if self.b is not None else " = 0")


@dataclass(frozen=True)
class BlockVarSpec:
    label: str
    dims: tuple
    level: int = 0
    cone: str = "psd"  # psd | free
    # index groups of a conserved charge; the optimum may be taken block diagonal
    sectors: tuple = field(default=None, compare=False, repr=False)

    @property
    def dim(self):
        return int(np.prod(self.dims))


@dataclass(eq=False)
class SdpProblem:
    """Block SDP with operator-form constraints.

    ``correction_rows`` maps each non-base PSD block to the row whose
    multiplier absorbs eigenvalue deficits of that block during certification,
    listed from the deepest block towards the base.
    """

    name: str
    blocks: list
    constraints: list
    objective: dict
    normalization: str
    correction_rows: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    gram_solver = None

    def __post_init__(self):
        self._blocks = {b.label: b for b in self.blocks}
        self._rows = {c.name: c for c in self.constraints}
        if len(self._blocks) != len(self.blocks) or len(self._rows) != len(self.constraints):
            raise ValueError("duplicate block or row names")
        for c in self.constraints:
            for t in c.terms:
                if t.block not in self._blocks:
                    raise ValueError(f"row {c.name} references unknown block {t.block}")
                if t.dims_chain[0] != self._blocks[t.block].dims:
                    raise ValueError(f"row {c.name} assumes dims {t.dims_chain[0]} for {t.block}")
        for label in self.objective:
            if label not in self._blocks:
                raise ValueError(f"objective references unknown block {label}")
        if self.normalization not in self._blocks:
            raise ValueError("unknown normalization block")
        self.dtype = complex if self._has_complex_data() else float

    def _has_complex_data(self):
        if any(np.iscomplexobj(c) for c in self.objective.values()):
            return True
        for c in self.constraints:
            if c.b is not None and np.iscomplexobj(c.b):
                return True
            for t in c.terms:
                if any(not ch.is_real for ch in t.channels):
                    return True
        return False

    def block(self, label):
        return self._blocks[label]

    def row(self, name):
        return self._rows[name]

    @property
    def labels(self):
        return [b.label for b in self.blocks]

    @property
    def base(self):
        return self.normalization

    # -- linear maps over dicts of matrices ---------------------------------

    def cost(self, label):
        c = self.objective.get(label)
        if c is None:
            return np.zeros((self._blocks[label].dim,) * 2, dtype=self.dtype)
        return c

    def apply_A(self, x):
        return {c.name: c.forward(x) for c in self.constraints}

    def apply_AT(self, y):
        out = {b.label: np.zeros((b.dim, b.dim), dtype=self.dtype) for b in self.blocks}
        for c in self.constraints:
            yr = y[c.name]
            for t in c.terms:
                out[t.block] = out[t.block] + t.adjoint(yr)
        return out

    def rhs(self):
        return {c.name: c.rhs(self.dtype) for c in self.constraints}

    def slacks(self, y):
        aty = self.apply_AT(y)
        return {lab: hermitize(self.cost(lab) - aty[lab]) for lab in self.labels}

    def primal_objective(self, x):
        return sum(inner(c, x[lab]) for lab, c in self.objective.items())

    def dual_objective(self, y):
        return sum(inner(c.b, y[c.name]) for c in self.constraints if c.b is not None)

    def identity_point(self):
        """Blocks proportional to the identity with unit trace."""
        return {b.label: np.eye(b.dim, dtype=self.dtype) / b.dim for b in self.blocks}

    def stats(self):
        return problem_stats(self)

    def to_dict(self):
        return {
            "name": self.name,
            "meta": self.meta,
            "blocks": [{"label": b.label, "dims": list(b.dims), "level": b.level, "cone": b.cone} for b in self.blocks],
            "rows": [{"name": c.name, "kind": c.kind, "size": c.size, "expr": c.describe()} for c in self.constraints],
            "objective": sorted(self.objective),
            "normalization": self.normalization,
            "correction_rows": self.correction_rows,
            "stats": problem_stats(self),
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def problem_stats(problem):
    """Block count, real scalar variable count and constraint row count."""
    per = 1 if problem.dtype is float else 2
    scalars = 0
    for b in problem.blocks:
        n = b.dim
        scalars += n * (n + 1) // 2 if per == 1 else n * n
    rows = 0
    for c in problem.constraints:
        n = c.size
        rows += n * (n + 1) // 2 if per == 1 else n * n
    return {"blocks": len(problem.blocks), "scalars": int(scalars), "rows": int(rows), "largest_block": max(b.dim for b in problem.blocks)}


def adjoint_probe(problem, seed=0):
    """Largest relative violation of ``<L(x), y> = <x, L^*(y)>`` over all rows."""
    rng = np.random.default_rng(seed)
    real = problem.dtype is float
    worst = 0.0
    for c in problem.constraints:
        y = random_hermitian(c.size, rng, real=real)
        for t in c.terms:
            x = random_hermitian(problem.block(t.block).dim, rng, real=real)
            lhs = inner(t.forward(x), y)
            rhs = inner(x, t.adjoint(y))
            scale = max(1.0, abs(lhs), abs(rhs))
            worst = max(worst, abs(lhs - rhs) / scale)
    return worst


def identity_residual(problem):
    """Max violation of the rows at the identity-proportional feasible point.

    The identity witness is rescaled per row so that each block carries the
    trace implied by its links; for the built problems every block has unit
    trace and unital-on-identity maps, so plain normalization suffices.
    """
    x = problem.identity_point()
    ax = problem.apply_A(x)
    b = problem.rhs()
    return max(np.abs(ax[k] - b[k]).max() for k in ax)


# ---------------------------------------------------------------------------
# builders


def _sites(n):
    return tuple(range(n))


def build_lti(spec, n):
    """Locally translation-invariant relaxation on ``n`` sites.

    Variables ``rho_m`` for ``m = k..n`` with ``rho_{m-1} = tr_L rho_m =
    tr_R rho_m``; the smallest block has unit trace and carries the energy.
    """
    d, k = spec.d, spec.k
    if n < k:
        raise ValueError(f"n={n} smaller than interaction range {k}")
    if d**n > MAX_SIDE:
        raise ValueError(f"block side {d**n} exceeds {MAX_SIDE}")
    blocks = [BlockVarSpec(f"rho{m}", (d,) * m, level=m - k) for m in range(k, n + 1)]
    rows = [_norm_row(blocks[0])]
    corr = {}
    for m in range(k + 1, n + 1):
        small, big = f"rho{m - 1}", f"rho{m}"
        dims = (d,) * m
        for side, site in (("L", 0), ("R", m - 1)):
            rows.append(
                AffineConstraint(
                    f"lti{m}{side}",
                    "lti",
                    (Term.make(small, (d,) * (m - 1)), Term.make(big, dims, (TraceOp((site,)),), -1.0)),
                )
            )
        corr[big] = f"lti{m}R"
    if n == k:
        # with a single block, translation invariance is imposed within it
        rows.extend(_self_lti_rows(blocks[0], k, d))
    corr = dict(reversed(list(corr.items())))
    obj = {blocks[0].label: averaged_base_term(spec, k)}
    return SdpProblem(f"lti-{spec.key}-n{n}", blocks, rows, obj, blocks[0].label, corr, {"method": "lti", "model": spec.key, "n": n})


def _norm_row(block):
    return AffineConstraint(
        "norm", "normalization", (Term.make(block.label, block.dims, (TraceOp(_sites(len(block.dims))),)),), np.ones((1, 1))
    )


def _self_lti_rows(block, m, d, name="lti_base", shift=1):
    """``tr_{first shift sites} X = tr_{last shift sites} X`` on one block."""
    if m <= shift:
        return []
    dims = block.dims
    left = TraceOp(tuple(range(shift)))
    right = TraceOp(tuple(range(len(dims) - shift, len(dims))))
    return [AffineConstraint(name, "lti", (Term.make(block.label, dims, (left,)), Term.make(block.label, dims, (right,), -1.0)))]


# ---------------------------------------------------------------------------
# single-block LTI form with an exact Gram solver


def _local_operator_basis(d):
    """Real orthogonal map from vec(d x d) to coefficients; row 0 is vec(I)/sqrt(d)."""
    first = np.eye(d).reshape(1, -1) / np.sqrt(d)
    rest = np.eye(d * d)
    q, _ = np.linalg.qr(np.concatenate([first, rest]).T)
    q = q[:, : d * d].T
    if q[0] @ first[0] < 0:
        q = -q
    return q


class ShiftGramSolver:
    """Exact ``(A A^*)^+`` for rows ``tr ρ = 1`` and ``tr_first ρ − tr_last ρ = 0``.

    In a product basis of local operators whose first element is the
    normalized identity, ``A A^*`` acts on the difference row as
    ``d (2 − P − P^T)`` where ``P`` drops a leading identity factor and
    appends one at the end. Strings that share a core (the segment between the
    first and last non-identity factor) form a path under ``P``, on which the
    operator is the Dirichlet Laplacian with a closed-form inverse.
    """

    def __init__(self, d, n, lti_row, norm_row):
        self.d, self.n = d, n
        self.m = n - 1
        self.q = _local_operator_basis(d)
        self.lti_row, self.norm_row = lti_row, norm_row
        self.norm_scale = float(d**n)

    def _to_strings(self, y):
        m, d = self.m, self.d
        t = y.reshape((d,) * (2 * m))
        t = t.transpose([a for i in range(m) for a in (i, m + i)]).reshape((d * d,) * m)
        for ax in range(m):
            t = np.moveaxis(np.tensordot(self.q, t, axes=([1], [ax])), 0, ax)
        return t

    def _from_strings(self, t):
        m, d = self.m, self.d
        for ax in range(m):
            t = np.moveaxis(np.tensordot(self.q.T, t, axes=([1], [ax])), 0, ax)
        t = t.reshape((d,) * (2 * m))
        inv = [2 * i for i in range(m)] + [2 * i + 1 for i in range(m)]
        return t.transpose(inv).reshape(d**m, d**m)

    def _green(self, length):
        p = np.arange(length)
        lo = np.minimum.outer(p, p) + 1
        hi = length - np.maximum.outer(p, p)
        return lo * hi / (length + 1)

    def _solve_strings(self, t):
        m = self.m
        out = np.zeros_like(t)
        for core in range(1, m + 1):
            places = m - core + 1
            sl_core = (slice(1, None),) if core == 1 else (slice(1, None),) + (slice(None),) * (core - 2) + (slice(1, None),)
            idx = [(0,) * q + sl_core + (0,) * (places - 1 - q) for q in range(places)]
            r = np.stack([t[i] for i in idx])
            x = np.tensordot(self._green(places), r, axes=([1], [0])) / self.d
            for q, i in enumerate(idx):
                out[i] = x[q]
        return out

    def __call__(self, r):
        w = {name: np.zeros_like(v) for name, v in r.items()}
        w[self.norm_row] = r[self.norm_row] / self.norm_scale
        w[self.lti_row] = self._from_strings(self._solve_strings(self._to_strings(r[self.lti_row])))
        return w


def build_lti_single(spec, n):
    """LTI relaxation with the top block only.

    ``rho_n`` PSD with unit trace and ``tr_first rho_n = tr_last rho_n``; the
    smaller marginals are implied. The optimum equals that of
    :func:`build_lti`.
    """
    d, k = spec.d, spec.k
    if n < k:
        raise ValueError(f"n={n} smaller than interaction range {k}")
    if d**n > MAX_SIDE:
        raise ValueError(f"block side {d**n} exceeds {MAX_SIDE}")
    blk = BlockVarSpec(f"rho{n}", (d,) * n, level=0, sectors=charge_sectors(spec, n))
    rows = [_norm_row(blk)] + _self_lti_rows(blk, n, d, name="lti")
    obj = {blk.label: averaged_base_term(spec, n)}
    prob = SdpProblem(f"lti-{spec.key}-n{n}", [blk], rows, obj, blk.label, {}, {"method": "lti", "model": spec.key, "n": n, "form": "single"})
    if n > 1:
        prob.gram_solver = ShiftGramSolver(d, n, "lti", "norm")
    return prob


# ---------------------------------------------------------------------------
# MPS-compressed relaxation


def default_base_size(d, D, k, n=None):
    """Smallest ``k0`` with ``d**(k0 - 1) > D**2``, kept within ``[k, n - 1]``."""
    k0 = 2
    while d ** (k0 - 1) <= D * D:
        k0 += 1
    k0 = max(k0, k, 2)
    if n is not None:
        k0 = min(k0, n - 1)
    return k0


def _normalized_W(mps, m):
    from .umps import build_W

    w = build_W(mps, m)
    norm = np.linalg.norm(w.kraus[0], 2)
    return CoarseGrainChannel(w.kraus / norm, w.in_dims, label=f"W{m}"), norm


def build_mps_relaxation(spec, n, mps, base_size=None):
    """Relaxation of LTI(n) compressed by the coarse-graining maps of a uniform MPS.

    Variables: the base state ``rho`` on ``k0`` sites and one state
    ``omega_m`` on ``(d, D^2, d)`` for each ``m = k0+1..n``. Rows::

        tr rho = 1,  tr_first rho = tr_last rho
        (id (x) W)(rho)  = tr_last omega_{k0+1},   (W (x) id)(rho) = tr_first omega_{k0+1}
        (id (x) R)(omega_{m-1}) = tr_last omega_m, (L (x) id)(omega_{m-1}) = tr_first omega_m

    ``W`` contracts ``k0 - 1`` MPS tensors and is divided by its operator norm
    so that it is trace non-increasing; rescaling all ``omega`` by the same
    constant leaves the optimum unchanged.
    """
    from .umps import build_L, build_R

    if mps.gauge != "left":
        raise ValueError("MPS must be in the left gauge")
    if mps.d != spec.d:
        raise ValueError("MPS physical dimension does not match the model")
    d, D, k = spec.d, mps.D, spec.k
    k0 = default_base_size(d, D, k, n) if base_size is None else int(base_size)
    if k0 < max(k, 2):
        raise ValueError(f"base window {k0} smaller than interaction range")
    if n < k0 + 1:
        raise ValueError(f"n={n} must exceed the base window {k0}")
    if d**k0 > MAX_SIDE:
        raise ValueError(f"base block side {d**k0} exceeds {MAX_SIDE}")
    w, wnorm = _normalized_W(mps, k0 - 1)
    lmap, rmap = build_L(mps), build_R(mps)
    base = BlockVarSpec("rho", (d,) * k0, level=0)
    blocks = [base]
    rows = [_norm_row(base)] + _self_lti_rows(base, k0, d)
    corr = {}
    prev = base
    bond = D * D
    for m in range(k0 + 1, n + 1):
        om = BlockVarSpec(f"omega{m}", (d, bond, d), level=m - k0)
        blocks.append(om)
        if prev is base:
            right = Term.make(base.label, base.dims, (ChannelOp(w, 1, k0),))
            left = Term.make(base.label, base.dims, (ChannelOp(w, 0, k0 - 1),))
        else:
            right = Term.make(prev.label, prev.dims, (ChannelOp(rmap, 1, 3),))
            left = Term.make(prev.label, prev.dims, (ChannelOp(lmap, 0, 2),))
        rows.append(AffineConstraint(f"link{m}R", "link", (right, Term.make(om.label, om.dims, (TraceOp((2,)),), -1.0))))
        rows.append(AffineConstraint(f"link{m}L", "link", (left, Term.make(om.label, om.dims, (TraceOp((0,)),), -1.0))))
        corr[om.label] = f"link{m}R"
        prev = om
    corr = dict(reversed(list(corr.items())))
    obj = {base.label: averaged_base_term(spec, k0)}
    meta = {"method": "mps", "model": spec.key, "n": n, "D": D, "k0": k0, "W_norm": float(wnorm)}
    prob = SdpProblem(f"mps-{spec.key}-n{n}-D{D}", blocks, rows, obj, base.label, corr, meta)
    prob.witness = lambda: _mps_witness(prob, mps, k0, wnorm)
    return prob


def _mps_witness(prob, mps, k0, wnorm):
    """Maximally mixed chain pushed through the MPS coarse-graining (strictly feasible)."""
    from .umps import build_R, build_W

    d = mps.d
    x = build_W(mps, k0 - 1).apply(np.eye(d ** (k0 - 1))) / wnorm**2
    rmap = build_R(mps)
    out = {"rho": np.eye(d**k0) / d**k0}
    for m in range(k0 + 1, prob.meta["n"] + 1):
        out[f"omega{m}"] = np.kron(np.kron(np.eye(d), x), np.eye(d)) / d**m
        x = rmap.apply(np.kron(x, np.eye(d)), (x.shape[0], d), 0, 2)
    return out


# ---------------------------------------------------------------------------
# tree-compressed relaxation


def _base_four(spec):
    if spec.k > 4:
        raise ValueError("tree relaxation needs an interaction on at most 4 sites")
    return averaged_base_term(spec, 4)


def build_ttn_relaxation(spec, N, stack, pair_channels=None):
    """Relaxation of the ``2**N``-site LTI problem compressed by tree channels.

    Variables: the LTI base state ``rho`` on 4 sites and, for each level
    ``m = 2..N-1``, a state ``omega_m`` on 4 coarse sites that is invariant
    under translation by one coarse site. Rows::

        tr rho = 1,  tr_first rho = tr_last rho
        (W_1 (x) W_1)(rho) = tr_{o3 o4} omega_2
        tr_first omega_m = tr_last omega_m
        (W_m (x) W_m)(omega_m) = tr_{o3 o4} omega_{m+1}

    With the coarse translation rows every neighbouring pair of ``omega_m``
    has the same marginal, so one linkage row per level suffices.

    ``pair_channels`` optionally replaces ``W_m (x) W_m`` in the row that
    feeds ``omega_{m+1}`` (keyed by ``m + 1``) with any CPTP map from the four
    sites of the previous block to two coarse sites, e.g. a symmetrized pair.
    """
    from .ttn import cptp_layers

    h4 = _base_four(spec)
    if N < 3:
        raise ValueError("tree relaxation needs N >= 3")
    if stack.d != spec.d:
        raise ValueError("stack physical dimension does not match the model")
    layers = cptp_layers(stack, N - 2)
    d = spec.d
    charge = _tree_charges(spec, layers, pair_channels or {})
    base_sec = None if pair_channels else charge_sectors(spec, 4)
    base = BlockVarSpec("rho", (d,) * 4, level=0, sectors=base_sec)
    blocks = [base]
    rows = [_norm_row(base)] + _self_lti_rows(base, 4, d)
    corr = {}
    prev = base
    for m in range(2, N):
        w = layers[m - 2].channel
        e = w.out_dim
        q = charge[m - 2]
        sec = None if q is None else sectors_from_charge(q[0], 4, q[1])
        om = BlockVarSpec(f"omega{m}", (e,) * 4, level=m - 1, sectors=sec)
        blocks.append(om)
        pair = (pair_channels or {}).get(m)
        if pair is None:
            lhs = Term.make(prev.label, prev.dims, (ChannelOp(w, 0, 2), ChannelOp(w, 1, 3)))
        else:
            if pair.out_dim != e * e:
                raise ValueError(f"pair channel for level {m} must output {e} x {e}")
            lhs = Term.make(prev.label, prev.dims, (ChannelOp(pair, 0, 4),))
        rhs = Term.make(om.label, om.dims, (TraceOp((2, 3)),), -1.0)
        rows.append(AffineConstraint(f"link{m}", "link", (lhs, rhs)))
        rows.extend(_self_lti_rows(om, 4, e, name=f"lti{m}"))
        corr[om.label] = f"link{m}"
        prev = om
    corr = dict(reversed(list(corr.items())))
    meta = {"method": "ttn", "model": spec.key, "N": N, "n": 2**N, "D": max(stack.dims[1:-1], default=1)}
    prob = SdpProblem(f"ttn-{spec.key}-N{N}", blocks, rows, {base.label: h4}, base.label, corr, meta)
    prob.witness = lambda: _ttn_witness(prob, layers, pair_channels or {})
    return prob


def _tree_charges(spec, layers, pairs):
    """Per-level ``(q, mod)`` of the coarse sites, ``None`` once covariance is lost.

    A level whose channel is charge covariant inherits a charge on its output
    site, so its block may be taken block diagonal in the total charge.
    Problems with pair channels are left without sectors.
    """
    found = None if pairs else conserved_charge(spec)
    out = []
    q = None if found is None else found
    for m, layer in zip(range(2, 2 + len(layers)), layers):
        if q is None or m in pairs:
            q = None
        else:
            qin = sectors_charge_pair(q[0])
            qo = induced_charge(layer.channel.kraus, qin, q[1])
            q = None if qo is None else (qo, q[1])
        out.append(q)
    return out


def sectors_charge_pair(q):
    """Charge of a two-site basis state."""
    q = np.asarray(q, dtype=float)
    return (q[:, None] + q[None, :]).reshape(-1)


def _ttn_witness(prob, layers, pairs):
    """Maximally mixed chain pushed through the tree channels.

    With a pair channel at some level the image of a product state need not
    be a product, so the witness is only returned for unmodified levels.
    """
    d = prob.blocks[0].dims[0]
    out = {"rho": np.eye(d**4) / d**4}
    x = np.eye(d) / d
    for m, layer in zip(range(2, prob.meta["N"]), layers):
        if m in pairs:
            raise ValueError("no product witness for problems with pair channels")
        x = layer.channel.apply(np.kron(x, x))
        out[f"omega{m}"] = np.kron(np.kron(x, x), np.kron(x, x))
    return out


def scaled_problem(problem, scale):
    """Same problem in the variables ``X_B / scale[B]``.

    Every term and cost of block ``B`` is multiplied by ``scale[B]``; the row
    multipliers and hence the dual objective are unchanged, while the dual
    slack of ``B`` is multiplied by ``scale[B]``.
    """
    rows = []
    for c in problem.constraints:
        terms = tuple(replace(t, coef=t.coef * scale.get(t.block, 1.0)) for t in c.terms)
        rows.append(replace(c, terms=terms))
    obj = {k: v * scale.get(k, 1.0) for k, v in problem.objective.items()}
    out = SdpProblem(problem.name, list(problem.blocks), rows, obj, problem.normalization, dict(problem.correction_rows), dict(problem.meta))
    return out


def build_two_lti_eight(spec):
    """Uncompressed 8-site problem: LTI base on 4 sites inside a 2-LTI 8-site state."""
    h4 = _base_four(spec)
    d = spec.d
    if d**8 > MAX_SIDE:
        raise ValueError(f"block side {d ** 8} exceeds {MAX_SIDE}")
    base = BlockVarSpec("rho", (d,) * 4, level=0)
    top = BlockVarSpec("sigma", (d,) * 8, level=1)
    rows = [_norm_row(base)] + _self_lti_rows(base, 4, d)
    rows.append(
        AffineConstraint(
            "link8",
            "link",
            (Term.make(base.label, base.dims), Term.make(top.label, top.dims, (TraceOp((4, 5, 6, 7)),), -1.0)),
        )
    )
    # translation by two sites: tr_{12} sigma = tr_{78} sigma
    rows.extend(_self_lti_rows(top, 8, d, name="lti8", shift=2))
    meta = {"method": "two-lti", "model": spec.key, "n": 8}
    prob = SdpProblem(f"two-lti-{spec.key}-n8", [base, top], rows, {base.label: h4}, base.label, {"sigma": "link8"}, meta)
    prob.witness = lambda: {"rho": np.eye(d**4) / d**4, "sigma": np.eye(d**8) / d**8}
    return prob
