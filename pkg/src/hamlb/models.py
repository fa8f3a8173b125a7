"""Benchmark spin-chain Hamiltonians, ring diagonalization and reference densities.

Spin-1/2 operators have eigenvalues +-1/2. Single-site fields are split evenly
over the two bonds touching a site, so the two-site term ``h`` satisfies
``e = tr(h rho_2)`` for the energy per site of a translation-invariant state.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special
from scipy.sparse.linalg import LinearOperator, eigsh

from .tensor import hermitize, kron

MAX_RING_DIM = 2**16


def spin_operators(s):
    """Return ``(Sx, Sy, Sz)`` for spin ``s`` in the ``S^z`` eigenbasis (descending)."""
    d = int(round(2 * s + 1))
    mz = s - np.arange(d)
    sp = np.zeros((d, d))
    for i in range(1, d):
        sp[i - 1, i] = np.sqrt(s * (s + 1) - mz[i] * (mz[i] + 1))
    sx = 0.5 * (sp + sp.T)
    sy = -0.5j * (sp - sp.T)
    return sx, sy, np.diag(mz)


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """Translation-invariant interaction.

    Attributes
    ----------
    name : str
        Catalog key (``tfi``, ``heis``, ``xxz``, ``xx``, ``heis1``, ``j1j2``).
    d : int
        Local dimension.
    k : int
        Number of sites the term ``h`` acts on.
    h : ndarray
        Term on ``d**k`` dimensional space; energy per site is ``tr(h rho_k)``.
    params : dict
        Model parameters.
    """

    name: str
    d: int
    k: int
    h: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        h = hermitize(np.asarray(self.h))
        if np.abs(h.imag).max(initial=0.0) == 0.0:
            h = h.real.copy()
        h.setflags(write=False)
        object.__setattr__(self, "h", h)
        if h.shape != (self.d**self.k,) * 2:
            raise ValueError("term shape does not match d**k")

    @property
    def key(self):
        items = ",".join(f"{k}={v:g}" for k, v in sorted(self.params.items()))
        return f"{self.name}({items})"

    @property
    def is_real(self):
        return not np.iscomplexobj(self.h)


@dataclass(frozen=True)
class ReferenceEnergy:
    value: float
    provenance: str  # analytic-constant | extrapolated-ED | variational


ROTATABLE = ("heis", "xxz", "xx", "heis1")

_DEFAULTS = {
    "tfi": {"hz": 1.0},
    "heis": {},
    "xxz": {"delta": 2.0},
    "xx": {},
    "heis1": {},
    "j1j2": {"j1": 4.15, "j2": 1.0},
}


def _xxz_term(s, delta, sign_xy=1.0):
    sx, sy, sz = spin_operators(s)
    h = sign_xy * (np.kron(sx, sx) + np.kron(sy, sy)) + delta * np.kron(sz, sz)
    return hermitize(h).real


def build_model(name, params=None, rotated=False):
    """Construct a catalog Hamiltonian.

    Parameters
    ----------
    name : str
        ``tfi`` (param ``hz``), ``heis``, ``xxz`` (param ``delta``), ``xx``,
        ``heis1`` (spin 1) or ``j1j2`` (params ``j1``, ``j2``).
    params : dict, optional
        Overrides of the default parameters.
    rotated : bool
        For XXZ-type models, apply the sublattice rotation that flips
        ``Sx, Sy`` on every second site. The rotated term describes a unitarily
        equivalent chain, so ground-state energy densities agree.
    """
    if name not in _DEFAULTS:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(_DEFAULTS)}")
    p = dict(_DEFAULTS[name])
    for key, val in (params or {}).items():
        if key not in p:
            raise ValueError(f"model {name!r} has no parameter {key!r}")
        p[key] = float(val)
    sign = -1.0 if rotated else 1.0
    if rotated and name not in ROTATABLE:
        raise ValueError("sublattice rotation only applies to XXZ-type models")
    if name == "tfi":
        sx, _, sz = spin_operators(0.5)
        eye = np.eye(2)
        h = -np.kron(sx, sx) - p["hz"] / 4 * (np.kron(sz, eye) + np.kron(eye, sz))
        return HamiltonianSpec(name, 2, 2, h, p)
    if name in ("heis", "xxz", "xx"):
        delta = {"heis": 1.0, "xx": 0.0}.get(name, p.get("delta"))
        return HamiltonianSpec(name, 2, 2, _xxz_term(0.5, delta, sign), dict(p, rotated=float(rotated)) if rotated else p)
    if name == "heis1":
        return HamiltonianSpec(name, 3, 2, _xxz_term(1.0, 1.0, sign), dict(p, rotated=1.0) if rotated else p)
    # j1j2: nearest-neighbour bonds are shared by two three-site windows
    ss = _xxz_term(0.5, 1.0)
    eye = np.eye(2)
    sx, sy, sz = spin_operators(0.5)
    nnn = sum(kron(o, eye, o) for o in (sx, sy, sz)).real
    h = p["j1"] / 2 * (np.kron(ss, eye) + np.kron(eye, ss)) + p["j2"] * nnn
    return HamiltonianSpec(name, 2, 3, h, p)


def sublattice_rotated(spec):
    """Rotated copy of an XXZ-type spec (unchanged for other or already rotated specs).

    A uniform single-site MPS cannot follow the two-site antiferromagnetic
    order of the unrotated chain; on the rotated chain it can, and the energy
    density is the same.
    """
    if spec.name not in ROTATABLE or spec.params.get("rotated"):
        return spec
    params = {k: v for k, v in spec.params.items() if k != "rotated"}
    return build_model(spec.name, params, rotated=True)


def parse_params(pairs):
    """Parse ``['key=value', ...]`` into a dict of floats."""
    out = {}
    for item in pairs or []:
        key, _, val = item.partition("=")
        if not _:
            raise ValueError(f"expected key=value, got {item!r}")
        out[key.strip()] = float(val)
    return out


def averaged_base_term(spec, base_size):
    """Energy-per-site observable on ``base_size`` sites.

    Averages all translates of ``h`` that fit in the window, so that
    ``tr(H rho) = tr(h rho_k)`` whenever ``rho`` is locally translation
    invariant.
    """
    if base_size < spec.k:
        raise ValueError(f"base window {base_size} smaller than interaction range {spec.k}")
    slots = base_size - spec.k + 1
    out = 0
    for t in range(slots):
        out = out + kron(np.eye(spec.d**t), spec.h, np.eye(spec.d ** (base_size - spec.k - t)))
    return hermitize(out / slots)


def _ring_bonds(m, k):
    if m < k:
        raise ValueError(f"ring of {m} sites too small for a {k}-site term")
    if m == k == 2:
        # both ring bonds join the same pair; count it once
        return [(0, 1)]
    return [tuple((i + j) % m for j in range(k)) for i in range(m)]


def ring_hamiltonian_operator(spec, m):
    """Matrix-free periodic Hamiltonian on ``m`` sites."""
    d, k = spec.d, spec.k
    dim = d**m
    if dim > MAX_RING_DIM:
        raise ValueError(f"ring dimension {dim} exceeds {MAX_RING_DIM}")
    bonds = _ring_bonds(m, k)
    h = spec.h.reshape((d,) * (2 * k))
    dtype = spec.h.dtype

    def matvec(v):
        psi = np.asarray(v).reshape((d,) * m)
        out = np.zeros_like(psi, dtype=np.result_type(psi, dtype))
        for sites in bonds:
            t = np.tensordot(h, psi, axes=(list(range(k, 2 * k)), list(sites)))
            # t has the acted sites first; move them back in place
            out += np.moveaxis(t, list(range(k)), list(sites))
        return out.reshape(-1)

    return LinearOperator((dim, dim), matvec=matvec, dtype=np.result_type(dtype, float))


def ring_hamiltonian_dense(spec, m):
    op = ring_hamiltonian_operator(spec, m)
    return op @ np.eye(op.shape[0])


def exact_pbc_ground_density(spec, m):
    """Ground energy of the periodic ``m``-site ring divided by ``m``.

    For ``m = 2`` (two-site terms) the ring has a single distinct bond which is
    counted once.
    """
    op = ring_hamiltonian_operator(spec, m)
    dim = op.shape[0]
    if dim <= 512:
        e0 = np.linalg.eigvalsh(hermitize(op @ np.eye(dim)))[0]
    else:
        v0 = np.random.default_rng(0).standard_normal(dim)
        e0 = eigsh(op, k=1, which="SA", tol=1e-12, v0=v0)[0][0]
    return float(e0) / m


def tfi_free_fermion_density(hz):
    """Exact TFI density from the free-fermion dispersion.

    ``-SxSx - (hz/2) Sz`` is a quarter of the Pauli-matrix chain
    ``-sx sx - hz sz`` whose density is ``-(1/pi) int_0^pi eps(q) dq`` with
    ``eps(q) = sqrt(1 + hz^2 + 2 hz cos q)``; the integral is a complete
    elliptic integral of the second kind.
    """
    hz = abs(float(hz))
    val = 2 * (1 + hz) * special.ellipe(4 * hz / (1 + hz) ** 2)
    return -val / np.pi / 4


def xxz_gapped_density(delta, terms=200):
    """Bethe-ansatz density of the XXZ chain for ``delta > 1``."""
    eta = np.arccosh(delta)
    n = np.arange(1, terms + 1)
    tail = np.sum(1.0 / (np.exp(2 * n * eta) + 1))
    return delta / 4 - np.sinh(eta) * (0.5 + 2 * tail)


HEIS_SPIN1_DENSITY = -1.401484038971


@lru_cache(maxsize=None)
def _variational_reference(name, items, D):
    from .umps import optimize_ground_state, energy_density

    spec = build_model(name, dict(items))
    mps = optimize_ground_state(spec, D, seed=0)
    return energy_density(mps, spec)


def reference_density(spec, variational_D=16):
    """Best known ground-state energy density of ``spec``.

    Closed forms are used where available; otherwise a large-bond-dimension
    uniform MPS energy is computed (and cached), which is an upper bound.
    """
    p = spec.params
    if spec.name == "tfi":
        return ReferenceEnergy(tfi_free_fermion_density(p["hz"]), "analytic-constant")
    if spec.name == "heis":
        return ReferenceEnergy(0.25 - np.log(2.0), "analytic-constant")
    if spec.name == "xx":
        return ReferenceEnergy(-1.0 / np.pi, "analytic-constant")
    if spec.name == "xxz" and p["delta"] > 1.0:
        return ReferenceEnergy(xxz_gapped_density(p["delta"]), "analytic-constant")
    if spec.name == "heis1":
        return ReferenceEnergy(HEIS_SPIN1_DENSITY, "variational")
    items = tuple(sorted((k, v) for k, v in p.items() if k != "rotated"))
    val = _variational_reference(spec.name, items, variational_D)
    return ReferenceEnergy(val, "variational")


def sublattice_rotation_unitary(d, m):
    """``exp(i pi Sz)`` on every second site of an ``m``-site ring (up to phase)."""
    s = (d - 1) / 2
    u = np.diag(np.exp(1j * np.pi * (s - np.arange(d))))
    return kron(*[u if i % 2 else np.eye(d) for i in range(m)])


def _total_charge(q, m):
    tot = np.zeros(len(q) ** m)
    for i in range(m):
        tot += np.kron(np.kron(np.ones(len(q) ** i), q), np.ones(len(q) ** (m - i - 1)))
    return tot


def conserved_charge(spec):
    """Detect a conserved on-site charge of ``h`` in the computational basis.

    Returns ``(q, modulus)`` where ``q`` is the integer charge per basis
    state and ``modulus`` is ``None`` for a U(1) charge or ``2`` for parity.
    Returns ``None`` if neither commutes with ``h``.
    """
    q = np.arange(spec.d, dtype=float)
    tot = _total_charge(q, spec.k)
    for mod in (None, 2):
        lab = tot if mod is None else np.mod(tot, mod)
        if np.abs(spec.h[lab[:, None] != lab[None, :]]).max(initial=0.0) < 1e-14:
            return q, mod
    return None


def induced_charge(kraus, q_in, mod=None, tol=1e-10):
    """Output charges making a channel charge-covariant, or ``None``.

    Each Kraus operator must shift the charge by a fixed amount:
    ``K_i[a, j] != 0`` only if ``q_out[a] - q_in[j] = delta_i``. The
    constraints link outputs and Kraus indices in a graph; each connected
    component is fixed by one free offset.
    """
    k = np.asarray(kraus)
    if k.ndim == 2:
        k = k[None]
    r, n_out, _ = k.shape
    scale = max(np.abs(k).max(initial=0.0), 1e-300)
    edges = [[] for _ in range(n_out + r)]  # nodes: outputs, then Kraus indices
    for i, a, j in zip(*np.nonzero(np.abs(k) > tol * scale)):
        edges[a].append((n_out + i, -q_in[j]))
        edges[n_out + i].append((a, q_in[j]))
    val = np.full(n_out + r, np.nan)

    def same(x, y):
        diff = x - y
        if mod is not None:
            diff = np.mod(diff + mod / 2, mod) - mod / 2
        return abs(diff) < 1e-9

    for start in range(n_out + r):
        if not np.isnan(val[start]):
            continue
        val[start] = 0.0
        stack = [start]
        while stack:
            u = stack.pop()
            for v, w in edges[u]:
                # q_out[a] - delta_i = q_in[j]
                target = val[u] + w
                if np.isnan(val[v]):
                    val[v] = target
                    stack.append(v)
                elif not same(val[v], target):
                    return None
    q_out = val[:n_out]
    return np.mod(q_out, mod) if mod is not None else q_out


def sectors_from_charge(q, m, mod=None):
    """Basis index groups of equal total charge on ``m`` sites with site charges ``q``."""
    tot = _total_charge(np.asarray(q, dtype=float), m)
    if mod is not None:
        tot = np.mod(tot, mod)
    lab = np.round(tot, 6)
    return tuple(np.flatnonzero(lab == v) for v in np.unique(lab))


def charge_sectors(spec, m):
    """Basis index groups of equal total charge on ``m`` sites, or ``None``."""
    found = conserved_charge(spec)
    if found is None or m < 1:
        return None
    q, mod = found
    tot = np.rint(_total_charge(q, m)).astype(int)
    if mod is not None:
        tot = np.mod(tot, mod)
    return tuple(np.flatnonzero(tot == v) for v in np.unique(tot))
