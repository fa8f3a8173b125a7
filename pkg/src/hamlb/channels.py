"""Completely positive maps in Kraus form.

A :class:`CoarseGrainChannel` compresses a block of sites into one coarse site.
Its Choi matrix uses the convention ``J = sum_ij |i><j| (x) Phi(|i><j|)`` with
the input factor first, so that ``Phi(X) = tr_in[(X^T (x) I) J]`` and trace
preservation reads ``tr_out J = I_in``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .tensor import apply_kraus, hermitize, partial_trace

TRACE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CoarseGrainChannel:
    """CP map ``X -> sum_k K_k X K_k^dagger``.

    Parameters
    ----------
    kraus : ndarray
        Stack of Kraus operators with shape ``(r, d_out, d_in)``.
    in_dims : tuple of int, optional
        Factorization of the input space (defaults to a single factor).
    label : str
        Free-form name used in reports.
    """

    kraus: np.ndarray
    in_dims: tuple = None
    label: str = ""
    _meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        k = np.asarray(self.kraus)
        if k.ndim == 2:
            k = k[None]
        if k.ndim != 3:
            raise ValueError("Kraus stack must have shape (r, d_out, d_in)")
        if not np.iscomplexobj(k):
            k = k.astype(float)
        k.setflags(write=False)
        object.__setattr__(self, "kraus", k)
        dims = self.in_dims if self.in_dims is not None else (k.shape[2],)
        dims = tuple(int(d) for d in dims)
        if int(np.prod(dims)) != k.shape[2]:
            raise ValueError(f"input factors {dims} inconsistent with Kraus shape {k.shape}")
        object.__setattr__(self, "in_dims", dims)

    @property
    def in_dim(self):
        return self.kraus.shape[2]

    @property
    def out_dim(self):
        return self.kraus.shape[1]

    @property
    def rank(self):
        return self.kraus.shape[0]

    @property
    def is_real(self):
        return not np.iscomplexobj(self.kraus)

    @cached_property
    def gram(self):
        """``sum_k K_k^dagger K_k``."""
        k = self.kraus
        return hermitize(np.einsum("kai,kaj->ij", k.conj(), k))

    @cached_property
    def trace_behavior(self):
        """One of ``'preserving'``, ``'nonincreasing'`` or ``'general'``."""
        g = self.gram
        eye = np.eye(self.in_dim)
        if np.abs(g - eye).max() <= TRACE_TOL:
            return "preserving"
        if np.linalg.eigvalsh(eye - g)[0] >= -TRACE_TOL:
            return "nonincreasing"
        return "general"

    def apply(self, m, dims=None, start=0, stop=None):
        """Apply on sites ``start:stop`` of an operator with factors ``dims``."""
        if dims is None:
            dims = self.in_dims
            start, stop = 0, len(dims)
        if stop is None:
            stop = start + len(self.in_dims)
        return apply_kraus(self.kraus, m, dims, start, stop)

    def adjoint_apply(self, y, dims, site):
        """Heisenberg-picture map on the coarse site ``site`` of ``dims``.

        The coarse site is expanded back to the input factors ``in_dims``.
        """
        kd = np.conj(np.transpose(self.kraus, (0, 2, 1)))
        return apply_kraus(kd, y, dims, site, site + 1)

    def adjoint(self):
        kd = np.conj(np.transpose(self.kraus, (0, 2, 1)))
        return CoarseGrainChannel(kd, (self.out_dim,), label=self.label + "^dag")

    def choi(self):
        """Choi matrix on ``in (x) out`` (see module docstring)."""
        k = self.kraus
        # J[(i,a),(j,b)] = sum_k K_k[a,i] conj(K_k[b,j])
        j = np.einsum("kai,kbj->iajb", k, k.conj())
        n = self.in_dim * self.out_dim
        return hermitize(j.reshape(n, n))

    def compose(self, inner):
        """``self o inner`` (apply ``inner`` first)."""
        k = np.einsum("aoi,bij->baoj", self.kraus, inner.kraus)
        k = k.reshape(-1, self.out_dim, inner.in_dim)
        return CoarseGrainChannel(_compress(k), inner.in_dims, label=f"{self.label}o{inner.label}")

    def tensor(self, other):
        """``self (x) other`` acting on the concatenated input factors."""
        k = np.einsum("aij,bkl->abikjl", self.kraus, other.kraus)
        k = k.reshape(self.rank * other.rank, self.out_dim * other.out_dim, self.in_dim * other.in_dim)
        return CoarseGrainChannel(k, self.in_dims + other.in_dims, label=f"{self.label}x{other.label}")

    def scaled(self, c):
        """Channel ``c * Phi`` for ``c >= 0``."""
        return CoarseGrainChannel(np.sqrt(c) * self.kraus, self.in_dims, label=self.label)


def _compress(k, tol=1e-14):
    """Reduce a Kraus stack to a minimal one via its Choi matrix when shorter."""
    r, dout, din = k.shape
    if r <= dout * din:
        return k
    return from_choi(np.einsum("kai,kbj->iajb", k, k.conj()).reshape(din * dout, din * dout), din, dout, tol=tol).kraus


def from_choi(j, in_dim, out_dim, in_dims=None, tol=1e-14):
    """Kraus form of a CP map from its Choi matrix (negative part discarded)."""
    w, v = np.linalg.eigh(hermitize(j))
    keep = w > tol * max(1.0, abs(w).max())
    vecs = v[:, keep] * np.sqrt(w[keep])
    # column (i, a) -> K[a, i]
    k = vecs.T.reshape(-1, in_dim, out_dim).transpose(0, 2, 1)
    if not np.iscomplexobj(j):
        k = k.real
    if k.shape[0] == 0:
        k = np.zeros((1, out_dim, in_dim))
    return CoarseGrainChannel(k, in_dims)


def make_trace_preserving(j, in_dim, out_dim):
    """Rescale a Choi matrix so that ``tr_out J = I``.

    Uses ``(M^{-1/2} (x) I) J (M^{-1/2} (x) I)`` with ``M = tr_out J``; the
    result stays PSD.
    """
    m = partial_trace(j, (in_dim, out_dim), [1])
    w, v = np.linalg.eigh(hermitize(m))
    w = np.maximum(w, 1e-14 * max(w.max(), 1e-300))
    s = (v / np.sqrt(w)) @ v.conj().T
    s = np.kron(s, np.eye(out_dim))
    return hermitize(s @ j @ s.conj().T)


def identity_channel(dim):
    return CoarseGrainChannel(np.eye(dim)[None], label="id")


def symmetrized_pair_channel(w1, w2):
    """CP map ``(w1 (x) w2 + w2 (x) w1) / 2``; trace preserving if both inputs are."""
    if w1.in_dim != w2.in_dim or w1.out_dim != w2.out_dim:
        raise ValueError("channels must have matching dimensions")
    if w1 is w2:
        return w1.tensor(w1)
    a = w1.tensor(w2).kraus
    b = w2.tensor(w1).kraus
    k = np.concatenate([a, b]) / np.sqrt(2.0)
    return CoarseGrainChannel(_compress(k), w1.in_dims + w2.in_dims, label="sym")
