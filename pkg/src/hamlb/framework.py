"""Marginal scenarios, dilation chains and commuting-diagram checks.

A relaxation level is sound when compressing a large state and then tracing
out gives the same result as tracing out first and then compressing with the
smaller maps::

    cg_m o CG_m o tr = tr o CG_{m+1}

``check_intertwining`` evaluates both paths on random product states.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor import kron, partial_trace, random_density

MAX_PROBE_DIM = 2**12


@dataclass(frozen=True)
class MarginalScenario:
    """Site labels with dimensions and a family of site subsets."""

    alphabet: dict
    family: tuple

    def __post_init__(self):
        for sub in self.family:
            for s in sub:
                if s not in self.alphabet:
                    raise ValueError(f"site {s!r} not in alphabet")
        if any(int(d) < 1 for d in self.alphabet.values()):
            raise ValueError("site dimensions must be positive")

    def dims(self, subset):
        return tuple(self.alphabet[s] for s in subset)

    def __le__(self, other):
        """Every subset of ``self`` is contained in some subset of ``other``."""
        return all(any(set(a) <= set(b) for b in other.family) for a in self.family)


@dataclass(frozen=True)
class IntertwiningLevel:
    """Two paths from states on ``fine_dims`` that must agree."""

    name: str
    fine_dims: tuple
    lhs: object  # callable: matrix -> matrix (tr, then CG_m, then cg_m)
    rhs: object  # callable: matrix -> matrix (CG_{m+1}, then tr)
    rows: tuple = ()
    blocks: tuple = ()


@dataclass
class EnsembleDilationChain:
    kind: str
    scenarios: list
    levels: dict = field(default_factory=dict)  # level -> list of IntertwiningLevel

    def level(self, m):
        if m not in self.levels:
            raise KeyError(f"chain has no level {m}; available {sorted(self.levels)}")
        return self.levels[m]


def check_intertwining(chain, m, probes=5, seed=0):
    """Largest elementwise deviation between the two paths at level ``m``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for lvl in chain.level(m):
        dim = int(np.prod(lvl.fine_dims))
        if dim > MAX_PROBE_DIM:
            raise ValueError(f"probe dimension {dim} exceeds {MAX_PROBE_DIM}")
        for _ in range(probes):
            state = kron(*[random_density(d, rng) for d in lvl.fine_dims])
            a, b = lvl.lhs(state), lvl.rhs(state)
            if a.shape != b.shape:
                raise ValueError(f"{lvl.name}: paths end in different spaces {a.shape} vs {b.shape}")
            worst = max(worst, float(np.abs(a - b).max()))
    return worst


# ---------------------------------------------------------------------------
# concrete chains


def mps_chain(mps, k0, top):
    """Chain for the MPS relaxation with base window ``k0`` up to ``top`` sites.

    ``CG_m = id (x) W_{m-2} (x) id`` compresses ``m`` sites to ``(d, D^2, d)``.
    Level ``m`` (``k0 < m <= top``) compares ``tr_last o CG_m`` with
    ``cg o tr_last``, where ``cg`` is ``id (x) W_{k0-1}`` on the base window
    for ``m = k0 + 1`` and ``(id (x) R) o CG_{m-1}`` above it; the mirrored
    paths use ``tr_first`` and ``L``.
    """
    from .umps import build_L, build_R, build_W

    d, D = mps.d, mps.D
    rmap, lmap = build_R(mps), build_L(mps)
    levels = {}
    scen = [MarginalScenario({i: d for i in range(k0)}, (tuple(range(k0)),))]
    for m in range(k0 + 1, top + 1):
        w_big = build_W(mps, m - 2)
        fine = (d,) * m

        def big(x, w=w_big, mm=m):
            return w.apply(x, (d,) * mm, 1, mm - 1)

        if m == k0 + 1:
            w_base = build_W(mps, k0 - 1)

            def cg_r(x, w=w_base):
                return w.apply(x, (d,) * k0, 1, k0)

            def cg_l(x, w=w_base):
                return w.apply(x, (d,) * k0, 0, k0 - 1)

            prev = "rho"
        else:
            w_small = build_W(mps, m - 3)

            def cg_r(x, w=w_small, mm=m - 1):
                return rmap.apply(w.apply(x, (d,) * mm, 1, mm - 1), (d, D * D, d), 1, 3)

            def cg_l(x, w=w_small, mm=m - 1):
                return lmap.apply(w.apply(x, (d,) * mm, 1, mm - 1), (d, D * D, d), 0, 2)

            prev = f"omega{m - 1}"

        def lhs_r(x, mm=m, cg=cg_r):
            return cg(partial_trace(x, (d,) * mm, [mm - 1]))

        def rhs_r(x, bg=big):
            return partial_trace(bg(x), (d, D * D, d), [2])

        def lhs_l(x, mm=m, cg=cg_l):
            return cg(partial_trace(x, (d,) * mm, [0]))

        def rhs_l(x, bg=big):
            return partial_trace(bg(x), (d, D * D, d), [0])

        names = (prev, f"omega{m}")
        levels[m] = [
            IntertwiningLevel(f"R{m}", fine, lhs_r, rhs_r, (f"(id x cg_R)({prev}) = tr_last omega{m}",), names),
            IntertwiningLevel(f"L{m}", fine, lhs_l, rhs_l, (f"(cg_L x id)({prev}) = tr_first omega{m}",), names),
        ]
        scen.append(MarginalScenario({i: d for i in range(m)}, (tuple(range(m - 1)), tuple(range(1, m)))))
    return EnsembleDilationChain("mps", scen, levels)


def ttn_chain(stack, N):
    """Chain for the tree relaxation on ``2**N`` sites.

    Level ``m`` (``1 <= m <= N - 2``) compares, on ``2**(m+2)`` fine sites,
    ``(V (x) V)`` after tracing out the last half with tracing the last two
    coarse sites after ``V^{(x)4}``, where ``V`` compresses ``2**m`` sites.
    The three linkage rows of the uncompressed problem (first, middle and last
    four-site windows) are all recorded.
    """
    from .ttn import compose_layers

    d = stack.d
    levels = {}
    scen = []
    for m in range(1, N - 1):
        v = compose_layers(stack, m)
        e = v.out_dim
        block = 2**m
        fine = (d,) * (4 * block)

        def lhs(x, v=v, block=block):
            half = partial_trace(x, (d,) * (4 * block), list(range(2 * block, 4 * block)))
            return v.apply(v.apply(half, (v.in_dim, v.in_dim), 0, 1), (v.out_dim, v.in_dim), 1, 2)

        def rhs(x, v=v, block=block, e=e):
            y = x
            dims = [v.in_dim] * 4
            for i in range(4):
                y = v.apply(y, tuple(dims), i, i + 1)
                dims[i] = e
            return partial_trace(y, (e,) * 4, [2, 3])

        rows = (
            f"(V x V)(rho[1..{2 * block}]) = tr_(o3 o4) omega{m + 1}",
            f"(V x V)(rho[{block + 1}..{3 * block}]) = tr_(o1 o4) omega{m + 1}",
            f"(V x V)(rho[{2 * block + 1}..{4 * block}]) = tr_(o1 o2) omega{m + 1}",
        )
        levels[m] = [IntertwiningLevel(f"V{m}", fine, lhs, rhs, rows, (f"omega{m + 1}",))]
        scen.append(MarginalScenario({i: d for i in range(4 * block)}, (tuple(range(2 * block)),)))
    return EnsembleDilationChain("ttn", scen, levels)


def relaxation_steps_trace(chain, level):
    """Symbolic record of how level ``level`` of the chain is derived.

    Returns a dict with the four derivation steps, the resulting linkage rows
    and the compressed blocks introduced at this level.
    """
    lvls = chain.level(level)
    rows = [r for lvl in lvls for r in lvl.rows]
    blocks = []
    for lvl in lvls:
        for b in lvl.blocks:
            if b not in blocks:
                blocks.append(b)
    new = blocks[-1]
    steps = [
        f"apply cg_{level} o CG_{level} to both sides of the marginal constraints at level {level}",
        f"rewrite cg_{level} o CG_{level} o tr as tr o CG_{level + 1} (intertwining)",
        f"compress: replace CG_{level + 1}(rho) by the new variable {new}",
        "keep positivity of every compressed state",
    ]
    return {"kind": chain.kind, "level": level, "steps": steps, "rows": rows, "blocks": blocks}
