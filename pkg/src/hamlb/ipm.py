"""Dense primal-dual interior-point path for small block SDPs.

The operator ``A`` is written out in an orthonormal Hermitian basis of every
block and every row, redundant rows are removed by an SVD, and a Mehrotra
predictor-corrector iteration with the HKM search direction::

    dX = sym((sigma mu I - X Z - X dZ - R) Z^{-1})

is run on the reduced system. Only suitable when ``A`` fits in memory as a
dense matrix; the splitting solver handles everything else.
"""

import time

import numpy as np
from scipy import linalg as sla

from .tensor import hermitize

STEP_FRACTION = 0.98
STALL_WINDOW = 8


def _herm_size(s, real):
    return s * (s + 1) // 2 if real else s * s


def _stack_to_coords(ms, real):
    """Coordinates of a stack ``(k, s, s)`` of Hermitian matrices, shape ``(k, n)``."""
    s = ms.shape[-1]
    iu = np.triu_indices(s, 1)
    parts = [np.real(np.diagonal(ms, axis1=-2, axis2=-1)), np.sqrt(2) * np.real(ms[:, iu[0], iu[1]])]
    if not real:
        parts.append(np.sqrt(2) * np.imag(ms[:, iu[0], iu[1]]))
    return np.concatenate(parts, axis=1)


def _coords_to_stack(v, s, real):
    """Inverse of :func:`_stack_to_coords` for a ``(k, n)`` array."""
    v = np.atleast_2d(v)
    k = v.shape[0]
    iu = np.triu_indices(s, 1)
    m = np.zeros((k, s, s), dtype=float if real else complex)
    nu = len(iu[0])
    off = v[:, s : s + nu] / np.sqrt(2)
    if not real:
        off = off + 1j * v[:, s + nu : s + 2 * nu] / np.sqrt(2)
    m[:, iu[0], iu[1]] = off
    m = m + np.conj(np.transpose(m, (0, 2, 1)))
    d = np.arange(s)
    m[:, d, d] = v[:, :s]
    return m


def _to_coords(m, real):
    return _stack_to_coords(m[None], real)[0]


def _to_matrix(v, s, real):
    return _coords_to_stack(v[None], s, real)[0]


class DenseLayout:
    """Column layout of the blocks and row layout of the constraints."""

    def __init__(self, problem):
        self.real = problem.dtype != complex
        self.blocks = []
        pos = 0
        for b in problem.blocks:
            n = _herm_size(b.dim, self.real)
            self.blocks.append((b.label, b.dim, b.cone, slice(pos, pos + n)))
            pos += n
        self.ncols = pos
        self.rows = []
        pos = 0
        for c in problem.constraints:
            n = _herm_size(c.size, self.real)
            self.rows.append((c.name, c.size, slice(pos, pos + n)))
            pos += n
        self.nrows = pos

    def psd(self):
        return [b for b in self.blocks if b[2] == "psd"]

    def free_columns(self):
        idx = [np.arange(sl.start, sl.stop) for _, _, cone, sl in self.blocks if cone == "free"]
        return np.concatenate(idx) if idx else np.zeros(0, dtype=int)


def dense_matrix(problem, layout=None):
    """``(A, b, c)`` in orthonormal coordinates."""
    lay = layout or DenseLayout(problem)
    col = {label: sl for label, _, _, sl in lay.blocks}
    a = np.zeros((lay.nrows, lay.ncols))
    rhs = problem.rhs()
    b = np.zeros(lay.nrows)
    by_name = {c.name: c for c in problem.constraints}
    for name, size, sl in lay.rows:
        row = by_name[name]
        b[sl] = _to_coords(hermitize(rhs[name]), lay.real)
        basis = _coords_to_stack(np.eye(sl.stop - sl.start), size, lay.real)
        for t in row.terms:
            adj = np.stack([hermitize(t.adjoint(e)) for e in basis])
            a[sl, col[t.block]] += _stack_to_coords(adj, lay.real)
    c = np.zeros(lay.ncols)
    for label, _, _, sl in lay.blocks:
        c[sl] = _to_coords(hermitize(problem.cost(label)), lay.real)
    return a, b, c


def dense_size(problem):
    lay = DenseLayout(problem)
    return lay.nrows, lay.ncols


def _max_step(x, dx):
    """Largest ``a <= 1/STEP_FRACTION`` with ``x + a dx`` PSD (``x`` positive definite)."""
    try:
        l = np.linalg.cholesky(x)
        li = sla.solve_triangular(l, np.eye(len(x)), lower=True)
        m = li @ dx @ li.conj().T
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(x)
        w = np.maximum(w, 1e-300)
        r = v / np.sqrt(w)
        m = r.conj().T @ dx @ r
    lam = np.linalg.eigvalsh(hermitize(m))[0]
    return np.inf if lam >= 0 else -1.0 / lam


def solve_ipm(problem, cfg):
    """Solve a small problem to high accuracy; returns a :class:`ConicSolution`."""
    from .solver import ConicSolution, _dual_settled, residuals

    t0 = time.perf_counter()
    lay = DenseLayout(problem)
    a_full, b_full, c = dense_matrix(problem, lay)
    cscale = max(np.linalg.norm(c), 1e-300)
    c = c / cscale
    u, sv, vt = np.linalg.svd(a_full, full_matrices=False)
    keep = sv > 1e-10 * max(sv[0], 1e-300)
    ur = u[:, keep]
    a = ur.T @ a_full
    b = ur.T @ b_full
    psd = lay.psd()
    free = lay.free_columns()
    af = a[:, free]
    real = lay.real

    x = np.zeros(lay.ncols)
    z = np.zeros(lay.ncols)
    for _, s, _, sl in psd:
        x[sl] = _to_coords(np.eye(s), real)
        z[sl] = _to_coords(np.eye(s), real)
    y = np.zeros(a.shape[0])
    nu = sum(s for _, s, _, _ in psd)
    bnorm, cnorm = 1 + np.linalg.norm(b), 1 + np.linalg.norm(c)
    status = "max_iters"
    history = []
    it = 0
    writer = None
    if cfg.trace:
        import csv

        trace_fh = open(cfg.trace, "w", newline="")
        writer = csv.writer(trace_fh)
        writer.writerow(["iteration", "primal_res", "dual_res", "gap", "primal_obj", "dual_obj", "mu"])
    try:
        for it in range(1, cfg.ipm_max_iters + 1):
            rp = b - a @ x
            rd = c - a.T @ y - z
            pobj, dobj = float(c @ x), float(b @ y)
            mu = sum(float(x[sl] @ z[sl]) for _, _, _, sl in psd) / max(nu, 1)
            err_p = np.linalg.norm(rp) / bnorm
            err_d = np.linalg.norm(rd) / cnorm
            gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
            history.append((it, err_p, err_d, gap, pobj * cscale, dobj * cscale, mu))
            if writer:
                writer.writerow(history[-1])
            if cfg.verbose:
                print(f"{it:4d} rp={err_p:.2e} rd={err_d:.2e} gap={gap:.2e} p={pobj * cscale:.12f} d={dobj * cscale:.12f} mu={mu:.1e}")
            if err_p <= cfg.eps_primal and err_d <= cfg.eps_dual and gap <= cfg.eps_gap:
                status = "optimal"
                break
            if cfg.dual_stop and _dual_settled(history, cfg):
                status = "dual_optimal"
                break
            if _stalled(history):
                status = "dual_optimal" if _dual_settled(history, cfg) else "stalled"
                break
            xm = {label: _to_matrix(x[sl], s, real) for label, s, _, sl in psd}
            zm = {label: _to_matrix(z[sl], s, real) for label, s, _, sl in psd}
            zinv = {k: hermitize(np.linalg.inv(v)) for k, v in zm.items()}
            rdm = {label: _to_matrix(rd[sl], s, real) for label, s, _, sl in psd}
            # Schur complement M = A_p H A_p^T with H(W) = sym(X W Z^-1)
            m = np.zeros((a.shape[0], a.shape[0]))
            for label, s, _, sl in psd:
                ws = _coords_to_stack(a[:, sl], s, real)
                hw = xm[label] @ ws @ zinv[label]
                hw = 0.5 * (hw + np.conj(np.transpose(hw, (0, 2, 1))))
                m += a[:, sl] @ _stack_to_coords(hw, real).T
            m = 0.5 * (m + m.T)
            solver = _KktSolver(m, af)

            def direction(sigma_mu, corr):
                g = np.zeros(lay.ncols)
                for label, s, _, sl in psd:
                    xg = sigma_mu * zinv[label] - xm[label] - _sym(xm[label] @ rdm[label] @ zinv[label])
                    if corr is not None:
                        xg = xg - _sym(corr[label] @ zinv[label])
                    g[sl] = _to_coords(xg, real)
                rhs1 = rp - a @ g
                dy, dxf = solver.solve(rhs1, rd[free])
                aty = a.T @ dy
                dx = g.copy()
                dz = rd - aty
                for label, s, _, sl in psd:
                    w = _to_matrix(aty[sl], s, real)
                    dx[sl] += _to_coords(_sym(xm[label] @ w @ zinv[label]), real)
                dx[free] = dxf
                dz[free] = 0.0
                return dx, dy, dz

            def steps(dx, dz):
                ap = ad = 1.0 / STEP_FRACTION
                for label, s, _, sl in psd:
                    ap = min(ap, _max_step(xm[label], _to_matrix(dx[sl], s, real)))
                    ad = min(ad, _max_step(zm[label], _to_matrix(dz[sl], s, real)))
                return min(1.0, STEP_FRACTION * ap), min(1.0, STEP_FRACTION * ad)

            dx, dy, dz = direction(0.0, None)
            ap, ad = steps(dx, dz)
            mu_aff = sum(float((x[sl] + ap * dx[sl]) @ (z[sl] + ad * dz[sl])) for _, _, _, sl in psd) / max(nu, 1)
            sigma = min(1.0, (mu_aff / max(mu, 1e-300)) ** 3)
            corr = {label: _to_matrix(dx[sl], s, real) @ _to_matrix(dz[sl], s, real) for label, s, _, sl in psd}
            dx, dy, dz = direction(sigma * mu, corr)
            ap, ad = steps(dx, dz)
            x = x + ap * dx
            y = y + ad * dy
            z = z + ad * dz
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
                status = "infeasible_flag"
                break
            if cfg.time_limit is not None and time.perf_counter() - t0 > cfg.time_limit:
                break
    finally:
        if writer:
            trace_fh.close()
    y_full = ur @ y * cscale
    primal = {label: hermitize(_to_matrix(x[sl], s, real)).astype(problem.dtype) for label, s, _, sl in lay.blocks}
    dual = {name: hermitize(_to_matrix(y_full[sl], size, real)).astype(problem.dtype) for name, size, sl in lay.rows}
    return ConicSolution(
        primal=primal,
        dual=dual,
        epsilon=problem.dual_objective(dual),
        primal_objective=problem.primal_objective(primal),
        residuals=residuals(problem, primal, dual),
        status=status,
        iterations=it,
        solve_time=time.perf_counter() - t0,
        history=history,
    )


def _stalled(history):
    """No iterate in the last ``STALL_WINDOW`` improved the worst residual."""
    if len(history) <= STALL_WINDOW:
        return False
    score = [max(h[1], h[2], h[3]) for h in history]
    return min(score[-STALL_WINDOW:]) >= 0.5 * min(score[:-STALL_WINDOW])


def _sym(m):
    return 0.5 * (m + m.conj().T)


class _KktSolver:
    """Solves ``[[M, A_f], [A_f^T, 0]] [dy; dx_f] = [r1; r2]``."""

    def __init__(self, m, af):
        self.nf = af.shape[1]
        if self.nf == 0:
            try:
                self.cho = sla.cho_factor(m)
                self.kind = "chol"
                return
            except np.linalg.LinAlgError:
                kkt = m
        else:
            k = m.shape[0]
            kkt = np.zeros((k + self.nf, k + self.nf))
            kkt[:k, :k] = m
            kkt[:k, k:] = af
            kkt[k:, :k] = af.T
        self.kind = "lstsq"
        self.kkt = kkt
        self.k = m.shape[0]

    def solve(self, r1, r2):
        if self.kind == "chol":
            return sla.cho_solve(self.cho, r1), np.zeros(0)
        rhs = np.concatenate([r1, r2])
        sol = sla.lstsq(self.kkt, rhs, cond=1e-14)[0]
        return sol[: self.k], sol[self.k :]
