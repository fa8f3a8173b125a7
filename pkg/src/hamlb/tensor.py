"""Dense tensor helpers for operators on chains of local Hilbert spaces.

Operators are plain numpy arrays. Multi-site operators carry a tuple of local
dimensions ``dims`` (left to right) so that partial traces and local channel
applications can be expressed by site index.
"""

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

DENSE_EIG_LIMIT = 4096


def hermitize(m):
    """Return the Hermitian part ``(m + m^dagger) / 2``."""
    return 0.5 * (m + m.conj().T)


def kron(*ops):
    """Kronecker product of any number of matrices (left to right)."""
    out = np.ones((1, 1))
    for op in ops:
        out = np.kron(out, op)
    return out


def eye_like(dims, dtype=float):
    return np.eye(int(np.prod(dims)), dtype=dtype)


def partial_trace(m, dims, traced):
    """Trace out the sites listed in ``traced``.

    Parameters
    ----------
    m : ndarray
        Square operator on ``prod(dims)`` dimensional space.
    dims : sequence of int
        Local dimensions.
    traced : iterable of int
        Site indices to remove.

    Returns
    -------
    ndarray
        Operator on the remaining sites, in their original order.
    """
    dims = tuple(int(d) for d in dims)
    traced = sorted(set(int(s) for s in traced))
    n = len(dims)
    if not traced:
        return m
    keep = [s for s in range(n) if s not in traced]
    t = m.reshape(dims + dims)
    # trace pairs one at a time from the back so axis indices stay valid
    for s in reversed(traced):
        cur = t.ndim // 2
        t = np.trace(t, axis1=s, axis2=s + cur)
    kd = int(np.prod([dims[s] for s in keep])) if keep else 1
    return t.reshape(kd, kd)


def embed(op, dims, start, stop):
    """Tensor ``op`` (acting on sites ``start:stop``) with identities elsewhere."""
    pre = int(np.prod(dims[:start]))
    post = int(np.prod(dims[stop:]))
    return np.kron(np.kron(np.eye(pre), op), np.eye(post))


def as_kraus_stack(kraus):
    """Kraus operators as an ``(r, d_out, d_in)`` array (accepts channels)."""
    kraus = getattr(kraus, "kraus", kraus)
    k = np.asarray(kraus)
    if k.ndim == 2:
        k = k[None]
    return k


def apply_kraus(kraus, m, dims, start, stop):
    """Apply the map ``X -> sum_k K_k X K_k^dagger`` on sites ``start:stop``.

    ``kraus`` is a channel, a list of matrices or an array of shape
    ``(r, d_out, d_in)`` where ``d_in`` is the joint dimension of the acting
    sites. The acted-on sites are replaced by a single site of dimension
    ``d_out``.
    """
    kraus = as_kraus_stack(kraus)
    dims = tuple(dims)
    if not 0 <= start < stop <= len(dims):
        raise ValueError(f"site range {start}:{stop} invalid for {len(dims)} sites")
    pre = int(np.prod(dims[:start]))
    din = int(np.prod(dims[start:stop]))
    post = int(np.prod(dims[stop:]))
    r, dout, kin = kraus.shape
    if kin != din:
        raise ValueError(f"Kraus input dimension {kin} does not match sites ({din})")
    t = m.reshape(pre, din, post, pre, din, post)
    x = np.tensordot(kraus, t, axes=([2], [1]))  # r, out, pre, post, pre, din, post
    x = np.tensordot(x, kraus.conj(), axes=([0, 5], [0, 2]))  # out, pre, post, pre, post, out'
    x = x.transpose(1, 0, 2, 3, 5, 4)
    size = pre * dout * post
    return x.reshape(size, size)


def min_eigenvalue(m, tol=1e-11, seed=0):
    """Smallest eigenvalue of a Hermitian matrix with an error estimate.

    Dense ``eigvalsh`` is used up to ``DENSE_EIG_LIMIT``; larger matrices use
    Lanczos. Returns ``(value, error_bound)``.
    """
    m = hermitize(np.asarray(m))
    n = m.shape[0]
    if not np.all(np.isfinite(m)):
        raise FloatingPointError("non-finite entries in matrix")
    scale = max(np.abs(m).max(), 1e-300)
    if n <= DENSE_EIG_LIMIT:
        w = np.linalg.eigvalsh(m)
        err = n * np.finfo(float).eps * scale
        return float(w[0]), float(err)
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)
    op = LinearOperator(m.shape, matvec=lambda v: m @ v, dtype=m.dtype)
    w, vec = eigsh(op, k=1, which="SA", tol=tol, v0=v0)
    resid = np.linalg.norm(m @ vec[:, 0] - w[0] * vec[:, 0])
    return float(w[0]), float(resid + n * np.finfo(float).eps * scale)


def project_psd(m):
    """Frobenius-nearest positive semidefinite matrix."""
    w, v = np.linalg.eigh(hermitize(m))
    pos = w > 0
    if pos.all():
        return hermitize(m)
    v = v[:, pos]
    return hermitize((v * w[pos]) @ v.conj().T)


def random_density(dim, rng, rank=None, real=False):
    """Random density matrix (Ginibre construction)."""
    rank = dim if rank is None else rank
    g = rng.standard_normal((dim, rank))
    if not real:
        g = g + 1j * rng.standard_normal((dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_hermitian(dim, rng, real=False):
    g = rng.standard_normal((dim, dim))
    if not real:
        g = g + 1j * rng.standard_normal((dim, dim))
    return hermitize(g)


def inner(a, b):
    """Real trace inner product ``Re tr(a^dagger b)``."""
    return float(np.vdot(a, b).real)
