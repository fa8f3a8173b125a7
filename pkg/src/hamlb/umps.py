"""Uniform matrix product states.

A uniform MPS is one tensor ``A[a, s, b]`` of shape ``(D, d, D)`` repeated on
every site. Bond legs of contracted blocks are always grouped as
``(left bond, right bond)``. In the left gauge ``sum_s A_s^dagger A_s = I``.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, eigsh

from .channels import CoarseGrainChannel

COND_LIMIT = 1e12
MAX_W_ENTRIES = 2**26
FIXED_POINT_GAP = 1e-10
DENSE_EFFECTIVE_LIMIT = 128


@dataclass(frozen=True, eq=False)
class UniformMps:
    A: np.ndarray
    gauge: str = "none"
    info: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        a = np.asarray(self.A)
        if a.ndim != 3 or a.shape[0] != a.shape[2]:
            raise ValueError("MPS tensor must have shape (D, d, D)")
        if not np.iscomplexobj(a):
            a = a.astype(float)
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "A", a)
        if self.gauge not in ("none", "left"):
            raise ValueError("gauge must be 'none' or 'left'")

    @property
    def D(self):
        return self.A.shape[0]

    @property
    def d(self):
        return self.A.shape[1]

    def left_gauge_error(self):
        a = self.A
        return float(np.abs(np.einsum("asb,asc->bc", a.conj(), a) - np.eye(self.D)).max())

    def to_dict(self):
        a = np.asarray(self.A)
        return {
            "shape": list(a.shape),
            "gauge": self.gauge,
            "real": a.real.ravel().tolist(),
            "imag": a.imag.ravel().tolist() if np.iscomplexobj(a) else None,
            "info": {k: v for k, v in self.info.items() if isinstance(v, (int, float, str, bool))},
        }

    @classmethod
    def from_dict(cls, data):
        a = np.asarray(data["real"], dtype=float)
        if data.get("imag") is not None:
            a = a + 1j * np.asarray(data["imag"], dtype=float)
        return cls(a.reshape(data["shape"]), data.get("gauge", "none"), dict(data.get("info", {})))


def save_mps(mps, path):
    with open(path, "w") as fh:
        json.dump(mps.to_dict(), fh)


def load_mps(path):
    with open(path) as fh:
        return UniformMps.from_dict(json.load(fh))


def random_mps(D, d, seed=0, real=True):
    """Random tensor with Gaussian entries (not gauge fixed)."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((D, d, D))
    if not real:
        a = a + 1j * rng.standard_normal((D, d, D))
    return UniformMps(a)


# ---------------------------------------------------------------------------
# transfer matrices and gauge


def transfer_matrix(a, b=None):
    """``E = sum_s A_s (x) conj(B_s)`` as a ``D^2 x D^2`` matrix."""
    b = a if b is None else b
    D = a.shape[0]
    return np.einsum("asb,csd->acbd", a, b.conj()).reshape(D * D, D * D)


def _dominant_left(a):
    """Dominant eigenvalue and left fixed point ``l`` with ``sum A^dag l A = lam l``."""
    D = a.shape[0]
    e = transfer_matrix(a)
    w, vl = sla.eig(e, left=True, right=False)
    i = int(np.argmax(np.abs(w)))
    lam = w[i]
    # left eigenvector of E: v^dag E = lam v^dag; reshape into D x D
    v = vl[:, i].conj()
    l = v.reshape(D, D).T
    l = 0.5 * (l + l.conj().T)
    if np.trace(l).real < 0:
        l = -l
    return lam, l


def to_left_gauge(mps):
    """Gauge transform ``A -> X A X^{-1}`` with ``sum_s A_s^dagger A_s = I``.

    The dominant transfer eigenvalue is normalized to one. Raises
    ``np.linalg.LinAlgError`` when the gauge transform is too poorly
    conditioned.
    """
    a = np.asarray(mps.A)
    lam, l = _dominant_left(a)
    if abs(lam) <= 0:
        raise np.linalg.LinAlgError("transfer matrix has vanishing spectral radius")
    w, v = np.linalg.eigh(l)
    if w.max() <= 0 or w.min() <= w.max() / COND_LIMIT**2:
        raise np.linalg.LinAlgError(f"gauge transform condition number exceeds {COND_LIMIT:g}")
    x = (v * np.sqrt(w)) @ v.conj().T
    xinv = (v / np.sqrt(w)) @ v.conj().T
    al = np.einsum("ab,bsc,cd->asd", x, a, xinv) / np.sqrt(abs(lam))
    if not np.iscomplexobj(a):
        al = al.real
    cond = float(np.sqrt(w.max() / w.min()))
    # polar clean-up keeps the isometry exact to rounding
    D, d, _ = al.shape
    u, _, vh = np.linalg.svd(al.reshape(D * d, D), full_matrices=False)
    iso = (u @ vh).reshape(D, d, D)
    if np.abs(iso - al).max() < 1e-6:
        al = iso
    return UniformMps(al, "left", dict(mps.info, gauge_condition=cond))


def right_fixed_point(al):
    """Right fixed point ``r`` of a left-gauged tensor, ``tr r = 1``.

    Raises ``np.linalg.LinAlgError`` if the dominant transfer eigenvalue is
    degenerate (non-injective tensor) or the fixed point is not positive.
    """
    D = al.shape[0]
    e = transfer_matrix(al)
    w, vr = np.linalg.eig(e)
    order = np.argsort(-np.abs(w))
    i = int(order[0])
    if D > 1 and abs(w[order[1]]) > abs(w[i]) * (1 - FIXED_POINT_GAP):
        raise np.linalg.LinAlgError("dominant transfer eigenvalue is degenerate")
    r = vr[:, i].reshape(D, D)
    r = 0.5 * (r + r.conj().T)
    tr = np.trace(r)
    if abs(tr) < 1e-12 * max(np.abs(r).max(), 1e-300):
        raise np.linalg.LinAlgError("right fixed point has vanishing trace")
    r = r / tr
    if np.linalg.eigvalsh(r).min() < -1e-8:
        raise np.linalg.LinAlgError("right fixed point is not positive")
    if not np.iscomplexobj(al):
        r = r.real
    return r


def _ensure_left(mps):
    return mps if mps.gauge == "left" else to_left_gauge(mps)


# ---------------------------------------------------------------------------
# coarse-graining channels


def block_tensor(a, m):
    """Contract ``m`` copies of ``A``: result ``M[a, s_1..s_m, b]`` as ``(D, d^m, D)``."""
    D, d, _ = a.shape
    out = np.eye(D, dtype=a.dtype).reshape(D, 1, D)
    for _ in range(m):
        out = np.einsum("asb,btc->astc", out, a).reshape(D, -1, D)
    return out


def build_W(mps, m):
    """Channel ``rho -> w rho w^dagger`` compressing ``m`` sites into one bond pair.

    ``w[(a, b), s] = (A_{s_1} ... A_{s_m})[a, b]`` with the output grouped as
    (left bond, right bond).
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    D, d = mps.D, mps.d
    if (D * D) * d**m > MAX_W_ENTRIES:
        raise ValueError(f"W_{m} would have {(D * D) * d**m} entries")
    blk = block_tensor(np.asarray(mps.A), m)
    w = blk.transpose(0, 2, 1).reshape(D * D, d**m)
    return CoarseGrainChannel(w[None], (d,) * m, label=f"W{m}")


def build_L(mps):
    """``l: (s, (a, b)) -> (c, b)`` contracting a new tensor on the left bond."""
    a = np.asarray(mps.A)
    D, d, _ = a.shape
    # l[(c, b), (s, a, b')] = A[c, s, a] delta(b, b')
    k = np.einsum("csa,bq->cbsaq", a, np.eye(D)).reshape(D * D, d * D * D)
    return CoarseGrainChannel(k[None], (d, D * D), label="L")


def build_R(mps):
    """``r: ((a, b), s) -> (a, c)`` contracting a new tensor on the right bond."""
    a = np.asarray(mps.A)
    D, d, _ = a.shape
    # r[(a, c), (a', b, s)] = delta(a, a') A[b, s, c]
    k = np.einsum("ap,bsc->acpbs", np.eye(D), a).reshape(D * D, D * D * d)
    return CoarseGrainChannel(k[None], (D * D, d), label="R")


# ---------------------------------------------------------------------------
# energies


def reduced_density(mps, k):
    """``k``-site reduced state of the infinite uniform state."""
    al = np.asarray(_ensure_left(mps).A)
    r = right_fixed_point(al)
    m = block_tensor(al, k)
    rho = np.einsum("asb,bc,atc->st", m, r, m.conj())
    return 0.5 * (rho + rho.conj().T)


def energy_density(mps, spec):
    """Energy per site ``tr(h rho_k)`` via transfer-matrix fixed points."""
    rho = reduced_density(mps, spec.k)
    return float(np.real(np.trace(spec.h @ rho)))


# ---------------------------------------------------------------------------
# variational optimization


def _polar(m):
    u, _, vh = np.linalg.svd(m, full_matrices=False)
    return u @ vh


def _mixed_gauge(al):
    """Return ``A_R`` and ``C`` with ``A_L C = C A_R`` from a left-gauged tensor."""
    D, d, _ = al.shape
    r = right_fixed_point(al)
    w, v = np.linalg.eigh(r)
    w = np.maximum(w, 1e-300)
    c = (v * np.sqrt(w)) @ v.conj().T  # r = C C^dagger
    cinv = (v / np.sqrt(w)) @ v.conj().T
    ar = np.einsum("ab,bsc,cd->asd", cinv, al, c)
    # polar clean-up: A_R is right isometric up to rounding
    ar = _polar(ar.reshape(D, d * D)).reshape(D, d, D)
    return ar, c


def _env_left(al, hl, r):
    """Solve ``L - E_L(L) + tr(L r) I = hl`` (sum of left-lying terms)."""
    D = al.shape[0]
    e = transfer_matrix(al).T  # acts on vec(L) from the left side
    lhs = np.eye(D * D) - e + np.outer(np.eye(D).reshape(-1), r.T.reshape(-1))
    sol = np.linalg.solve(lhs, hl.reshape(-1))
    return sol.reshape(D, D)


def _env_right(ar, hr, lfix):
    D = ar.shape[0]
    e = transfer_matrix(ar)
    lhs = np.eye(D * D) - e + np.outer(np.eye(D).reshape(-1), lfix.T.reshape(-1))
    sol = np.linalg.solve(lhs, hr.reshape(-1))
    return sol.reshape(D, D)


class _Vumps:
    """Variational uniform MPS fixed-point iteration for ``k``-site terms."""

    def __init__(self, spec):
        self.spec = spec
        self.k = spec.k
        self.d = spec.d
        self.h = spec.h

    def setup(self, al):
        k, d = self.k, self.d
        D = al.shape[0]
        ar, c = _mixed_gauge(al)
        r = c @ c.conj().T
        lfix = c.conj().T @ c
        hk = self.h.reshape(d**k, d**k)
        mL = block_tensor(al, k)
        e = float(np.real(np.einsum("asb,bc,atc,ts->", mL, r, mL.conj(), hk)))
        ht = hk - e * np.eye(d**k)
        # terms ending at the bond (left) / starting at the bond (right)
        hl = np.einsum("ctb,ts,csa->ab", mL.conj(), ht, mL)
        mR = block_tensor(ar, k)
        hr = np.einsum("asc,ts,btc->ab", mR, ht, mR.conj())
        lenv = _env_left(al, hl, r)
        renv = _env_right(ar, hr, lfix)
        self.state = dict(al=al, ar=ar, c=c, e=e, ht=ht, lenv=lenv, renv=renv, D=D)
        return e

    def _apply_ac(self, ac):
        s = self.state
        al, ar, ht, D, d, k = s["al"], s["ar"], s["ht"], s["D"], self.d, self.k
        out = np.einsum("ab,bsc->asc", s["lenv"], ac) + np.einsum("asb,bc->asc", ac, s["renv"])
        for j in range(k):
            bl = block_tensor(al, j)
            br = block_tensor(ar, k - 1 - j)
            ket = np.einsum("apb,bsc,cqe->apsqe", bl, ac, br, optimize=True).reshape(D, d**k, D)
            ket = np.einsum("ts,asb->atb", ht, ket).reshape(D, d**j, d, d ** (k - 1 - j), D)
            out += np.einsum("xpa,xpsqy,bqy->asb", bl.conj(), ket, br.conj(), optimize=True)
        return out

    def _apply_c(self, c):
        s = self.state
        al, ar, ht, D, d, k = s["al"], s["ar"], s["ht"], s["D"], self.d, self.k
        out = s["lenv"] @ c + c @ s["renv"]
        for j in range(1, k):
            bl = block_tensor(al, j)
            br = block_tensor(ar, k - j)
            ket = np.einsum("apb,bc,cqe->apqe", bl, c, br, optimize=True).reshape(D, d**k, D)
            ket = np.einsum("ts,asb->atb", ht, ket).reshape(D, d**j, d ** (k - j), D)
            out += np.einsum("xpa,xpqy,bqy->ab", bl.conj(), ket, br.conj(), optimize=True)
        return out

    def _lowest(self, apply, shape, start=None):
        n = int(np.prod(shape))
        dtype = self.state["al"].dtype
        if n > DENSE_EFFECTIVE_LIMIT:
            op = LinearOperator((n, n), matvec=lambda v: apply(v.reshape(shape)).reshape(-1), dtype=dtype)
            v0 = None if start is None else np.asarray(start, dtype=dtype).reshape(-1)
            w, v = eigsh(op, k=1, which="SA", tol=1e-12, v0=v0, ncv=min(n, 40))
            return v[:, 0].reshape(shape)
        basis = np.eye(n, dtype=dtype)
        hmat = np.stack([apply(basis[i].reshape(shape)).reshape(-1) for i in range(n)], axis=1)
        hmat = 0.5 * (hmat + hmat.conj().T)
        w, v = np.linalg.eigh(hmat)
        return v[:, 0].reshape(shape)

    def gradient(self):
        """Tangent-space gradient norm ``||H_AC(A_C) - A_L H_C(C)||``."""
        s = self.state
        D, d = s["D"], self.d
        ac = np.einsum("asb,bc->asc", s["al"], s["c"])
        hac = self._apply_ac(ac).reshape(D * d, D)
        hc = self._apply_c(s["c"])
        g = hac - s["al"].reshape(D * d, D) @ hc
        return float(np.linalg.norm(g))

    def update(self):
        s = self.state
        D, d = s["D"], self.d
        ac = self._lowest(self._apply_ac, (D, d, D), np.einsum("asb,bc->asc", s["al"], s["c"]))
        c = self._lowest(self._apply_c, (D, D), s["c"])
        ul = _polar(ac.reshape(D * d, D))
        uc = _polar(c)
        al = (ul @ uc.conj().T).reshape(D, d, D)
        # eigenvectors carry an arbitrary sign; keep the candidate close to the iterate
        if np.real(np.vdot(s["al"], al)) < 0:
            al = -al
        return al


def optimize_ground_state(spec, D, seed=0, max_iter=500, tol=1e-8, restarts=3, initial=None):
    """Variational uniform MPS ground state.

    Parameters
    ----------
    spec : HamiltonianSpec
    D : int
        Bond dimension.
    seed : int
        Seed of the random initial tensor.
    max_iter : int
        Iteration cap (``0`` returns the left-gauged random start).
    tol : float
        Convergence threshold on ``||A_C - A_L C||``.
    restarts : int
        Fresh random starts tried when the cap is hit without convergence.
    initial : UniformMps, optional
        Starting point instead of a random tensor.

    Returns
    -------
    UniformMps
        Left-gauged tensor; ``info`` records the energy, iteration count,
        gradient norm and a ``converged`` flag. Accepted iterates never
        increase the energy.
    """
    if D < 1:
        raise ValueError("D must be positive")
    real = spec.is_real
    best = None
    for attempt in range(max(1, restarts)):
        if initial is not None and attempt == 0:
            start = _ensure_left(initial)
        else:
            start = to_left_gauge(random_mps(D, spec.d, seed=seed + 7919 * attempt, real=real))
        res = _run_vumps(spec, np.asarray(start.A), max_iter, tol)
        if best is None or res.info["energy"] < best.info["energy"] - 1e-14:
            best = res
        if res.info["converged"] or max_iter == 0:
            break
    best.info["restarts"] = attempt
    return best


def _run_vumps(spec, al, max_iter, tol):
    solver = _Vumps(spec)
    e = solver.setup(al)
    history = [e]
    err = solver.gradient()
    converged = err < tol
    it = 0
    for it in range(1, max_iter + 1):
        if converged:
            it -= 1
            break
        cand = solver.update()
        accepted = False
        t = 1.0
        while t > 1e-3:
            trial = cand if t == 1.0 else _mix(al, cand, t)
            try:
                e_new = solver_energy(spec, trial)
            except np.linalg.LinAlgError:
                e_new = np.inf
            if e_new <= e + 1e-13:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        al = trial
        e = solver.setup(al)
        history.append(e)
        err = solver.gradient()
        converged = err < tol
    info = dict(energy=float(e), iterations=it, gradient=float(err), converged=bool(converged or max_iter == 0))
    mps = UniformMps(al, "left", info)
    mps.info["history"] = history
    return mps


def _mix(al_old, al_new, t):
    D, d, _ = al_old.shape
    m = (1 - t) * al_old.reshape(D * d, D) + t * al_new.reshape(D * d, D)
    return _polar(m).reshape(D, d, D)


def solver_energy(spec, al):
    return energy_density(UniformMps(al, "left"), spec)
