"""Binary tree tensor networks on periodic chains of ``2**N`` sites.

Layer ``l`` holds one tensor ``T_l`` of shape ``(D_l, D_{l-1}**2)`` with
orthonormal rows, shared by all nodes of that layer. The top tensor has a
single row and fixes the pure state of the whole ring::

    |psi> = (T_1^dag)^{(x) 2^{N-1}} ... (T_{N-1}^dag)^{(x) 2} T_N^dag

Layers are converted into trace preserving coarse-graining channels by
sending everything outside the row space of ``T_l`` to one extra garbage
level.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .channels import CoarseGrainChannel
from .models import ring_hamiltonian_operator
from .umps import UniformMps

ISOMETRY_TOL = 1e-8
MAX_COMPOSE_DIM = 2**13


@dataclass(eq=False)
class TreeStack:
    """Layers ``T_1..T_L`` of a uniform binary tree; ``dims[0] = d`` and ``dims[L] = 1``."""

    layers: list
    dims: list
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layers = [np.asarray(t) for t in self.layers]
        self.dims = [int(x) for x in self.dims]
        if len(self.dims) != len(self.layers) + 1:
            raise ValueError("dims must have one entry more than layers")
        for l, t in enumerate(self.layers, start=1):
            if t.shape != (self.dims[l], self.dims[l - 1] ** 2):
                raise ValueError(f"layer {l} has shape {t.shape}, expected {(self.dims[l], self.dims[l - 1] ** 2)}")

    @property
    def d(self):
        return self.dims[0]

    @property
    def levels(self):
        return len(self.layers)

    def isometry_error(self):
        return max(np.abs(t @ t.conj().T - np.eye(t.shape[0])).max() for t in self.layers)

    def to_dict(self):
        return {
            "dims": self.dims,
            "layers": [
                {
                    "real": t.real.ravel().tolist(),
                    "imag": t.imag.ravel().tolist() if np.iscomplexobj(t) else None,
                }
                for t in self.layers
            ],
            "info": {k: v for k, v in self.info.items() if isinstance(v, (int, float, str, bool))},
        }

    @classmethod
    def from_dict(cls, data):
        dims = data["dims"]
        layers = []
        for l, item in enumerate(data["layers"], start=1):
            t = np.asarray(item["real"], dtype=float)
            if item.get("imag") is not None:
                t = t + 1j * np.asarray(item["imag"], dtype=float)
            layers.append(t.reshape(dims[l], dims[l - 1] ** 2))
        return cls(layers, dims, dict(data.get("info", {})))


_KINDS = {"uniform_mps": UniformMps, "tree_stack": TreeStack}


def save_ansatz(obj, path):
    """Write a :class:`UniformMps` or :class:`TreeStack` to a tagged JSON file."""
    kind = {cls: name for name, cls in _KINDS.items()}.get(type(obj))
    if kind is None:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    with open(path, "w") as fh:
        json.dump({"kind": kind, "data": obj.to_dict()}, fh)


def load_ansatz(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("kind") not in _KINDS:
        raise ValueError(f"unknown ansatz kind {payload.get('kind')!r}")
    return _KINDS[payload["kind"]].from_dict(payload["data"])


# ---------------------------------------------------------------------------
# state contraction


def _descend(vec, t, sites):
    """Apply ``T^dag`` to each of ``sites`` coarse indices of ``vec``."""
    dl, dpair = t.shape
    dprev = int(round(np.sqrt(dpair)))
    b = t.conj().T.reshape(dprev, dprev, dl)
    psi = vec.reshape((dl,) * sites)
    for i in range(sites):
        # axis 2i carries the next coarse index; it becomes two fine axes
        psi = np.tensordot(psi, b, axes=([2 * i], [2]))
        psi = np.moveaxis(psi, [-2, -1], [2 * i, 2 * i + 1])
    return psi.reshape(-1)


def _ascend(vec, t, sites):
    """Adjoint of :func:`_descend`: apply ``T`` to pairs of fine indices."""
    dl, dpair = t.shape
    psi = vec.reshape((dpair,) * sites)
    for i in range(sites):
        psi = np.tensordot(psi, t, axes=([i], [1]))
        psi = np.moveaxis(psi, -1, i)
    return psi.reshape(-1)


def tree_state(stack):
    """Full state vector on ``2**L`` physical sites."""
    vec = stack.layers[-1].conj().reshape(-1)
    for l in range(stack.levels - 1, 0, -1):
        vec = _descend(vec, stack.layers[l - 1], 2 ** (stack.levels - l))
    return vec


def tree_energy(stack, spec):
    """Energy per site of the tree state on the periodic ring."""
    psi = tree_state(stack)
    op = ring_hamiltonian_operator(spec, 2**stack.levels)
    return float(np.vdot(psi, op @ psi).real) / 2**stack.levels


# ---------------------------------------------------------------------------
# variational optimization


def _layer_dims(d, N, D):
    dims = [d]
    for l in range(1, N):
        dims.append(min(D, dims[-1] ** 2))
    return dims + [1]


def _energy_and_grad(layers, l, hop, m):
    """Energy per site and its gradient with respect to ``T_l`` (for ``l < L``).

    The gradient ``G`` satisfies ``dE = Re tr(dT^dag G)``.
    """
    L = len(layers)
    top = layers[-1].conj().reshape(-1)
    vec = top
    for j in range(L - 1, l, -1):
        vec = _descend(vec, layers[j - 1], 2 ** (L - j))
    # vec now lives on the level-l sites; K copies of B act on it
    K = 2 ** (L - l)
    t = layers[l - 1]
    chi = _descend(vec, t, K)
    phys = chi
    for j in range(l - 1, 0, -1):
        phys = _descend(phys, layers[j - 1], 2 ** (L - j))
    hphys = hop @ phys
    energy = float(np.vdot(phys, hphys).real) / m
    eta = hphys
    for j in range(1, l):
        eta = _ascend(eta, layers[j - 1], 2 ** (L - j))
    dl, dpair = t.shape
    eta = eta.reshape((dpair,) * K)
    b = t.conj().T
    grad = np.zeros((dpair, dl), dtype=np.result_type(eta, b))
    for j in range(K):
        # environment of copy j: all other copies applied to vec
        zeta = vec.reshape((dl,) * K)
        for i in range(K):
            if i != j:
                zeta = np.tensordot(zeta, b, axes=([i], [1]))
                zeta = np.moveaxis(zeta, -1, i)
        others = [i for i in range(K) if i != j]
        grad += np.tensordot(eta.conj(), zeta, axes=(others, others))
    # dE = 2 Re <grad, dB>; gradient with respect to T = B^dag
    return energy, 2 * grad.T / m


def _retract(t):
    u, _, vh = np.linalg.svd(t, full_matrices=False)
    return u @ vh


def _layer_descent(layers, l, hop, m, steps, step0, tol):
    t = layers[l - 1]
    e, g = _energy_and_grad(layers, l, hop, m)
    step = step0
    history = [e]
    for _ in range(steps):
        # tangent projection onto the row-orthonormal manifold
        rg = g - (g @ t.conj().T + t @ g.conj().T) @ t / 2
        gnorm = np.linalg.norm(rg)
        if gnorm < tol:
            break
        accepted = False
        while step > 1e-12:
            trial = _retract(t - step * rg)
            layers[l - 1] = trial
            e_new, g_new = _energy_and_grad(layers, l, hop, m)
            if e_new <= e - 1e-4 * step * gnorm**2:
                accepted = True
                break
            step /= 2
        if not accepted:
            layers[l - 1] = t
            break
        t, e, g = trial, e_new, g_new
        history.append(e)
        step *= 2
    layers[l - 1] = t
    return e, step, history


def _top_exact(layers, hop, m):
    """Replace the top vector by the ground state of the ascended Hamiltonian."""
    L = len(layers)
    dim = layers[-1].shape[1]
    cols = []
    for i in range(dim):
        v = np.zeros(dim)
        v[i] = 1.0
        phys = v
        for j in range(L - 1, 0, -1):
            phys = _descend(phys, layers[j - 1], 2 ** (L - j))
        h = hop @ phys
        for j in range(1, L):
            h = _ascend(h, layers[j - 1], 2 ** (L - j))
        cols.append(h)
    heff = np.array(cols).T
    heff = (heff + heff.conj().T) / 2
    w, v = np.linalg.eigh(heff)
    layers[-1] = v[:, 0].conj().reshape(1, -1)
    return float(w[0]) / m


def _rdm_initial(spec, N, dims, rng):
    """Initial layers from leading eigenvectors of block density matrices of the ED ground state."""
    m = 2**N
    op = ring_hamiltonian_operator(spec, m)
    from scipy.sparse.linalg import eigsh

    v0 = rng.standard_normal(op.shape[0])
    _, vecs = eigsh(op, k=1, which="SA", tol=1e-10, v0=v0)
    psi = vecs[:, 0]
    layers = []
    cur = psi
    for l in range(1, N):
        din = dims[l - 1]
        sites = 2 ** (N - l)
        # density matrix of the first pair of level-(l-1) sites
        mat = cur.reshape(din * din, -1)
        rho = mat @ mat.conj().T
        w, u = np.linalg.eigh((rho + rho.conj().T) / 2)
        t = u[:, ::-1][:, : dims[l]].conj().T
        layers.append(t)
        cur = _ascend(cur, t, sites)
        cur = cur / np.linalg.norm(cur)
    layers.append(np.zeros((1, dims[N - 1] ** 2)))
    return layers


def optimize_tree(spec, N, D, seed=0, sweeps=50, steps=10, tol=1e-9, init="rdm"):
    """Variational uniform tree state for the periodic ``2**N``-site ring.

    Each sweep sets the top tensor to the exact ground state of the ascended
    Hamiltonian and then runs Riemannian gradient steps with Armijo
    backtracking on every lower layer, so the energy never increases.

    Returns
    -------
    TreeStack
        ``info`` carries ``energy`` (per site), ``sweeps``, ``converged`` and
        a ``history`` list (not serialized) of energies after every update.
    """
    if spec.k > 2 ** N:
        raise ValueError("interaction longer than the ring")
    rng = np.random.default_rng(seed)
    dims = _layer_dims(spec.d, N, D)
    m = 2**N
    hop = ring_hamiltonian_operator(spec, m)
    if init == "rdm":
        layers = _rdm_initial(spec, N, dims, rng)
    else:
        layers = []
        for l in range(1, N):
            q = np.linalg.qr(rng.standard_normal((dims[l - 1] ** 2, dims[l])))[0]
            layers.append(q.T)
        layers.append(np.zeros((1, dims[N - 1] ** 2)))
    e = _top_exact(layers, hop, m)
    history = [e]
    steps_size = {l: 1.0 for l in range(1, N)}
    converged = False
    done = 0
    for done in range(1, sweeps + 1):
        e_start = e
        for l in range(1, N):
            e_l, steps_size[l], hist = _layer_descent(layers, l, hop, m, steps, steps_size[l], tol)
            history.extend(hist[1:])
            e = _top_exact(layers, hop, m)
            history.append(e)
        if e_start - e < tol:
            converged = True
            break
    info = {"energy": e, "sweeps": done, "converged": converged, "history": history}
    return TreeStack(layers, dims, info)


# ---------------------------------------------------------------------------
# channels


@dataclass(frozen=True, eq=False)
class CptpLayer:
    """Trace preserving channel built from one tree layer."""

    channel: CoarseGrainChannel
    garbage: bool

    @property
    def out_dim(self):
        return self.channel.out_dim

    @property
    def in_dim(self):
        return self.channel.in_dim


def isometry_to_cptp(t, prior_garbage=False):
    """Channel with Kraus operators ``T`` and ``|g><k|`` for ``k`` spanning the kernel.

    Parameters
    ----------
    t : ndarray, shape (D_out, D_in**2)
        Layer tensor with orthonormal rows.
    prior_garbage : bool
        If set, each input site carries one extra garbage level (the last
        index); every input sector touching it is sent to the new garbage.

    The garbage level is only appended when the kernel is non-empty.
    """
    t = np.asarray(t)
    dout, dpair = t.shape
    din = int(round(np.sqrt(dpair)))
    if din * din != dpair:
        raise ValueError("layer input is not a pair of equal sites")
    err = np.abs(t @ t.conj().T - np.eye(dout)).max()
    if err > ISOMETRY_TOL:
        raise ValueError(f"layer rows are not orthonormal (deviation {err:.2e})")
    site = din + 1 if prior_garbage else din
    full = np.zeros((dout, site, site), dtype=t.dtype)
    full[:, :din, :din] = t.reshape(dout, din, din)
    full = full.reshape(dout, site * site)
    kernel = linalg.null_space(full, rcond=1e-10).conj().T if full.shape[1] > dout else np.zeros((0, site * site))
    if kernel.shape[0] == 0:
        kraus = full[None]
        return CptpLayer(CoarseGrainChannel(kraus, (site, site), label="Wtree"), False)
    kraus = np.zeros((1 + kernel.shape[0], dout + 1, site * site), dtype=np.result_type(full, kernel))
    kraus[0, :dout] = full
    kraus[1:, dout] = kernel
    return CptpLayer(CoarseGrainChannel(kraus, (site, site), label="Wtree"), True)


def cptp_layers(stack, count=None):
    """CPTP channels ``W_1..W_count`` for the lower layers of ``stack``."""
    count = stack.levels - 1 if count is None else count
    if count > stack.levels - 1:
        raise ValueError("not enough layers in the stack")
    out, garbage = [], False
    for l in range(1, count + 1):
        layer = isometry_to_cptp(stack.layers[l - 1], prior_garbage=garbage)
        out.append(layer)
        garbage = layer.garbage
    return out


def compose_layers(stack, j):
    """Channel from ``2**j`` physical sites to one coarse site."""
    if j < 1:
        raise ValueError("j must be at least 1")
    layers = cptp_layers(stack, j)
    if stack.d ** (2**j) > MAX_COMPOSE_DIM:
        raise ValueError(f"input dimension {stack.d ** (2 ** j)} exceeds {MAX_COMPOSE_DIM}")
    chan = layers[0].channel
    for layer in layers[1:]:
        chan = layer.channel.compose(chan.tensor(chan))
    return chan
