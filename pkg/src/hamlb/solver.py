"""First-order conic solver for :class:`~hamlb.sdp.SdpProblem` instances.

The primal problem is split as ``x in {A x = b}`` and ``z in K`` and solved by
over-relaxed ADMM (Douglas-Rachford)::

    x  = P_aff(z - u - c / rho)
    xh = alpha x + (1 - alpha) z
    z  = P_K(xh + u)
    u  = u + xh - z

At a fixed point ``S = -rho u`` is the dual slack and the multipliers ``y``
solve ``A A^* y = A(c - S)``. The affine projection is matrix-free and uses
conjugate gradients on ``A A^*`` with a per-row diagonal preconditioner.
"""

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .tensor import hermitize, inner, project_psd, random_hermitian


@dataclass(frozen=True)
class SolverConfig:
    """Solver settings.

    ``alpha`` is the over-relaxation parameter. ``scaling='diagonal'`` turns on
    the row preconditioner of the inner CG solves.
    """

    eps_primal: float = 1e-8
    eps_dual: float = 1e-8
    eps_gap: float = 1e-8
    max_iters: int = 200000
    scaling: str = "diagonal"
    seed: int = 0
    alpha: float = 1.6
    rho: float = None
    adaptive_rho: bool = True
    rho_min: float = 1e-4
    rho_max: float = 1e4
    anderson: int = 8
    safeguard: float = 2.0
    check_every: int = 20
    cg_tol: float = 1e-12
    cg_max_iters: int = 500
    dense_gram_limit: int = 6000
    time_limit: float = None
    dual_stop: bool = False
    block_scale: float = 0.5
    method: str = "auto"
    ipm_limit: int = 3000
    ipm_work: float = 5e9
    ipm_max_iters: int = 100
    dual_window: int = 5
    trace: str = None
    verbose: bool = False

    def __post_init__(self):
        if min(self.eps_primal, self.eps_dual, self.eps_gap) <= 0:
            raise ValueError("tolerances must be positive")
        if self.scaling not in ("none", "diagonal"):
            raise ValueError("scaling must be 'none' or 'diagonal'")
        if not 0 < self.alpha < 2:
            raise ValueError("alpha must lie in (0, 2)")
        if self.method not in ("auto", "admm", "ipm"):
            raise ValueError("method must be 'auto', 'admm' or 'ipm'")


@dataclass
class ConicSolution:
    primal: dict
    dual: dict
    epsilon: float
    primal_objective: float
    residuals: tuple
    status: str
    iterations: int
    solve_time: float = 0.0
    history: list = field(default_factory=list, repr=False)

    @property
    def dual_objective(self):
        return self.epsilon

    def multipliers(self, problem, kind):
        """Multipliers of rows of one kind (``link``/``lti``/``normalization``)."""
        return {c.name: self.dual[c.name] for c in problem.constraints if c.kind == kind}


# ---------------------------------------------------------------------------
# helpers over dicts of blocks


def _axpy(a, x, y):
    return {k: a * x[k] + y[k] for k in y}


def _sub(x, y):
    return {k: x[k] - y[k] for k in x}


def _dot(x, y):
    return sum(inner(x[k], y[k]) for k in x)


def _norm(x):
    return np.sqrt(max(_dot(x, x), 0.0))


def project_psd_sectors(m, sectors):
    """PSD projection of a matrix assumed block diagonal in ``sectors``.

    Entries coupling different sectors are dropped, which is the orthogonal
    projection onto the charge-conserving subspace.
    """
    out = np.zeros_like(m)
    for idx in sectors:
        sub = np.ix_(idx, idx)
        out[sub] = project_psd(m[sub])
    return out


def project_cone(problem, x):
    out = {}
    for b in problem.blocks:
        if b.cone != "psd":
            out[b.label] = hermitize(x[b.label])
        elif b.sectors is not None:
            out[b.label] = project_psd_sectors(x[b.label], b.sectors)
        else:
            out[b.label] = project_psd(x[b.label])
    return out


def negative_part_norm(m):
    w = np.linalg.eigvalsh(hermitize(m))
    neg = w[w < 0]
    return float(np.sqrt(np.sum(neg * neg))), float(w[0])


class AffineProjector:
    """Projection onto ``{x : A x = b}`` via preconditioned CG on ``A A^*``."""

    def __init__(self, problem, config):
        self.p = problem
        self.cfg = config
        self.b = problem.rhs()
        self.bnorm = _norm(self.b)
        self.precond = self._diagonal() if config.scaling == "diagonal" else None
        self.warm = {c.name: np.zeros((c.size, c.size), dtype=problem.dtype) for c in problem.constraints}
        self.cg_iters = 0
        self.exact = getattr(problem, "gram_solver", None)
        if self.exact is None and row_scalar_count(problem) <= config.dense_gram_limit:
            self.exact = DenseGramSolver(problem)

    def _diagonal(self):
        # scalar Rayleigh quotient of the row's own A A^* on a random Hermitian probe;
        # the identity is a poor probe since it is annihilated by translation rows
        rng = np.random.default_rng(self.cfg.seed)
        scale = {}
        for c in self.p.constraints:
            probe = random_hermitian(c.size, rng, real=self.p.dtype != complex)
            scale[c.name] = max(_row_aat(c, probe) / inner(probe, probe), 1e-12)
        return scale

    def gram(self, y):
        return self.p.apply_A(self.p.apply_AT(y))

    def solve_gram(self, r, warm=None, tol=None):
        """Solve ``A A^* w = r`` (exact solver when the problem provides one, else CG)."""
        if self.exact is not None:
            return self.exact(r)
        tol = self.cfg.cg_tol if tol is None else tol
        w = {k: v.copy() for k, v in (warm or {k: np.zeros_like(v) for k, v in r.items()}).items()}
        res = _sub(r, self.gram(w))
        rnorm0 = max(_norm(r), 1e-300)
        pre = self.precond
        z = {k: res[k] / pre[k] for k in res} if pre else res
        d = {k: v.copy() for k, v in z.items()}
        rz = _dot(res, z)
        for it in range(self.cfg.cg_max_iters):
            if _norm(res) <= tol * rnorm0 or rz <= 0:
                break
            q = self.gram(d)
            dq = _dot(d, q)
            if dq <= 0:
                break
            a = rz / dq
            w = _axpy(a, d, w)
            res = _axpy(-a, q, res)
            z = {k: res[k] / pre[k] for k in res} if pre else res
            rz_new = _dot(res, z)
            d = _axpy(rz_new / rz, d, z)
            rz = rz_new
        self.cg_iters += it + 1
        return w

    def __call__(self, v):
        r = _sub(self.p.apply_A(v), self.b)
        w = self.solve_gram(r, self.warm)
        self.warm = w
        corr = self.p.apply_AT(w)
        return {k: hermitize(v[k] - corr[k]) for k in v}

    def multipliers(self, target, warm=None):
        """Least-squares ``y`` with ``A^* y`` closest to ``target``."""
        return self.solve_gram(self.p.apply_A(target), warm, tol=min(self.cfg.cg_tol, 1e-13))


def _herm_size(s, real):
    return s * (s + 1) // 2 if real else s * s


def herm_to_coords(m, real):
    """Coordinates of a Hermitian matrix in an orthonormal basis (Frobenius)."""
    s = m.shape[0]
    iu = np.triu_indices(s, 1)
    parts = [np.diag(m).real, np.sqrt(2) * m[iu].real]
    if not real:
        parts.append(np.sqrt(2) * m[iu].imag)
    return np.concatenate(parts)


def coords_to_herm(v, s, real):
    iu = np.triu_indices(s, 1)
    k = len(iu[0])
    m = np.zeros((s, s), dtype=float if real else complex)
    off = v[s : s + k] / np.sqrt(2)
    if not real:
        off = off + 1j * v[s + k : s + 2 * k] / np.sqrt(2)
    m[iu] = off
    m = m + m.conj().T
    m[np.diag_indices(s)] = v[:s]
    return m


def row_scalar_count(problem):
    real = problem.dtype != complex
    return sum(_herm_size(c.size, real) for c in problem.constraints)


class DenseGramSolver:
    """Exact ``(A A^*)^+`` from the row Gram matrix in an orthonormal Hermitian basis.

    The Gram matrix is assembled once by applying ``A A^*`` to basis elements,
    so ``A`` itself stays matrix free. Redundant rows are handled by the
    pseudo-inverse.
    """

    def __init__(self, problem, rcond=1e-10):
        self.p = problem
        self.real = problem.dtype != complex
        self.sizes = [(c.name, c.size) for c in problem.constraints]
        offs, pos = {}, 0
        for name, size in self.sizes:
            offs[name] = pos
            pos += _herm_size(size, self.real)
        self.offsets = offs
        total = pos
        touching = {}
        for c in problem.constraints:
            for t in c.terms:
                touching.setdefault(t.block, set()).add(c.name)
        by_name = {c.name: c for c in problem.constraints}
        gram = np.zeros((total, total))
        for c in problem.constraints:
            blocks = {t.block for t in c.terms}
            rows = [by_name[n] for n in by_name if any(n in touching[b] for b in blocks)]
            nb = _herm_size(c.size, self.real)
            for j in range(nb):
                e = np.zeros(nb)
                e[j] = 1.0
                y = coords_to_herm(e, c.size, self.real)
                back = {}
                for t in c.terms:
                    back[t.block] = back.get(t.block, 0) + t.adjoint(y)
                col = offs[c.name] + j
                for r in rows:
                    val = 0
                    for t in r.terms:
                        if t.block in back:
                            val = val + t.forward(back[t.block])
                    if isinstance(val, np.ndarray):
                        start = offs[r.name]
                        vec = herm_to_coords(hermitize(val), self.real)
                        gram[start : start + len(vec), col] = vec
        gram = (gram + gram.T) / 2
        w, v = np.linalg.eigh(gram)
        keep = w > rcond * max(w[-1], 1e-300)
        self.v = v[:, keep]
        self.winv = 1.0 / w[keep]
        self.rank = int(keep.sum())
        self.size = total

    def __call__(self, r):
        vec = np.concatenate([herm_to_coords(hermitize(r[name]), self.real) for name, _ in self.sizes])
        sol = self.v @ (self.winv * (self.v.T @ vec))
        out = {}
        for name, size in self.sizes:
            start = self.offsets[name]
            out[name] = coords_to_herm(sol[start : start + _herm_size(size, self.real)], size, self.real)
        return out


def _row_aat(row, probe):
    back = {}
    for t in row.terms:
        back[t.block] = back.get(t.block, 0) + t.adjoint(probe)
    return sum(inner(t.forward(back[t.block]), probe) for t in row.terms)


# ---------------------------------------------------------------------------
# residuals


def residuals(problem, solution_or_x, y=None):
    """Recompute (primal, dual, gap) residuals from the iterates.

    primal: ``||A x - b|| / (1 + ||b||)``
    dual:   Frobenius norm of the negative part of the slacks ``c - A^* y``
            (plus the full slack of free blocks)
    gap:    ``|<c, x> - <b, y>| / (1 + |<c, x>| + |<b, y>|)``
    """
    if y is None:
        x, y = solution_or_x.primal, solution_or_x.dual
    else:
        x = solution_or_x
    b = problem.rhs()
    ax = problem.apply_A(x)
    rp = _norm(_sub(ax, b)) / (1 + _norm(b))
    slacks = problem.slacks(y)
    sq = 0.0
    for blk in problem.blocks:
        s = slacks[blk.label]
        if blk.cone == "free":
            sq += inner(s, s)
        else:
            sq += negative_part_norm(s)[0] ** 2
    rd = np.sqrt(sq)
    pobj = problem.primal_objective(x)
    dobj = problem.dual_objective(y)
    gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
    return float(rp), float(rd), float(gap)


def default_rho(problem):
    """Initial penalty matched to the size of a normalized state on the largest block."""
    side = max(b.dim for b in problem.blocks)
    return max(1.0, np.sqrt(side) / 2)


def _dual_settled(history, cfg):
    """Dual feasible and the dual objective flat over the last checks."""
    if len(history) < cfg.dual_window:
        return False
    recent = history[-cfg.dual_window :]
    if any(h[2] > cfg.eps_dual for h in recent):
        return False
    vals = [h[5] for h in recent]
    return max(vals) - min(vals) <= cfg.eps_gap


def _objective_scale(problem):
    norm = np.sqrt(sum(inner(c, c) for c in problem.objective.values()))
    return norm if norm > 0 else 1.0


# ---------------------------------------------------------------------------
# main loop


class _Anderson:
    """Type-II Anderson acceleration on flattened iterates."""

    def __init__(self, memory, reg=1e-10):
        self.memory = memory
        self.reg = reg
        self.reset()

    def reset(self):
        self.dp, self.dg = [], []
        self.gram = np.zeros((0, 0))
        self.last = None

    def _push(self, dp, dg):
        if len(self.dg) == self.memory:
            self.dp.pop(0)
            self.dg.pop(0)
            self.gram = self.gram[1:, 1:]
        row = np.array([np.vdot(v, dg).real for v in self.dg])
        k = len(self.dg)
        gram = np.empty((k + 1, k + 1))
        gram[:k, :k] = self.gram
        gram[k, :k] = gram[:k, k] = row
        gram[k, k] = np.vdot(dg, dg).real
        self.gram = gram
        self.dp.append(dp)
        self.dg.append(dg)

    def step(self, p, g):
        """Return an extrapolated point given the iterate ``p`` and its residual ``g``."""
        if self.last is not None:
            self._push(p - self.last[0], g - self.last[1])
        self.last = (p, g)
        if not self.dg:
            return p + g
        gram = self.gram + self.reg * (np.trace(self.gram) + 1e-300) * np.eye(len(self.dg))
        rhs = np.array([np.vdot(v, g).real for v in self.dg])
        try:
            gamma = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            self.reset()
            return p + g
        out = p + g
        for c, a, b in zip(gamma, self.dp, self.dg):
            out -= c * (a + b)
        return out


def _flatten(problem, blocks):
    return np.concatenate([blocks[lab].ravel() for lab in problem.labels])


def _unflatten(problem, vec):
    out, pos = {}, 0
    for b in problem.blocks:
        n = b.dim * b.dim
        out[b.label] = vec[pos : pos + n].reshape(b.dim, b.dim)
        pos += n
    return out


def solve(problem, config=None, warm_start=None, projector=None):
    """Solve ``problem`` by over-relaxed ADMM (Douglas-Rachford splitting).

    With ``method='auto'`` problems whose dense constraint matrix is small
    (see ``ipm_limit`` and ``ipm_work``) go to the interior-point path of
    :mod:`hamlb.ipm` instead.

    The iteration runs on ``p = z + u``::

        z = P_K(p)
        x = P_aff(2 z - p - c / rho)
        p <- p + alpha (x - z)

    and is sped up by safeguarded Anderson acceleration.

    Parameters
    ----------
    problem : SdpProblem
    config : SolverConfig, optional
    warm_start : ConicSolution, optional
        Previous solution on a problem with identical block/row layout.
    projector : callable, optional
        Replacement for the matrix-free affine projector (used by the dense
        path).

    Returns
    -------
    ConicSolution
        Residuals are recomputed from the returned primal and dual iterates.
    """
    cfg = config or SolverConfig()
    if projector is None and _use_ipm(problem, cfg):
        from .ipm import solve_ipm

        return solve_ipm(problem, cfg)
    if cfg.block_scale and len(problem.blocks) > 1 and projector is None:
        return _solve_scaled(problem, cfg, warm_start)
    return _solve_core(problem, cfg, warm_start, projector)


DENSE_SCALAR_LIMIT = 200000
DENSE_ENTRY_LIMIT = 6 * 10**7


def solve_dense_small(problem, config=None):
    """High-accuracy solve of a small problem on the dense interior-point path.

    Meant as an independent cross-check of :func:`solve`. Raises
    ``ValueError`` when the problem has more than ``DENSE_SCALAR_LIMIT`` real
    scalars or its dense constraint matrix would not fit in memory.
    """
    from .ipm import dense_size, solve_ipm

    scalars = problem.stats()["scalars"]
    rows, cols = dense_size(problem)
    if scalars > DENSE_SCALAR_LIMIT or rows * cols > DENSE_ENTRY_LIMIT:
        raise ValueError(f"problem too large for the dense path ({scalars} scalars, {rows} x {cols} matrix)")
    cfg = config or SolverConfig(eps_primal=1e-10, eps_dual=1e-10, eps_gap=1e-10)
    return solve_ipm(problem, cfg)


def _use_ipm(problem, cfg):
    if cfg.method == "ipm":
        return True
    if cfg.method != "auto":
        return False
    from .ipm import dense_size

    rows, cols = dense_size(problem)
    # forming the Schur complement costs about rows^2 * cols per iteration
    return rows <= cfg.ipm_limit and rows * rows * cols <= cfg.ipm_work


def block_scales(problem, power):
    """``(side_base / side_B) ** power`` for every block."""
    base = problem.block(problem.normalization).dim
    return {b.label: (base / b.dim) ** power for b in problem.blocks}


def _solve_scaled(problem, cfg, warm_start):
    from .sdp import scaled_problem

    t = block_scales(problem, cfg.block_scale)
    sp = scaled_problem(problem, t)
    ws = None
    if warm_start is not None:
        ws = replace(warm_start, primal={k: v / t[k] for k, v in warm_start.primal.items()})
    sol = _solve_core(sp, replace(cfg, block_scale=0.0), ws, None)
    z = {k: v * t[k] for k, v in sol.primal.items()}
    return replace(
        sol,
        primal=z,
        primal_objective=problem.primal_objective(z),
        epsilon=problem.dual_objective(sol.dual),
        residuals=residuals(problem, z, sol.dual),
    )


def _solve_core(problem, cfg, warm_start=None, projector=None):
    t0 = time.perf_counter()
    proj = projector or AffineProjector(problem, cfg)
    cscale = _objective_scale(problem)
    c = {lab: problem.cost(lab) / cscale for lab in problem.labels}
    rho = cfg.rho if cfg.rho is not None else default_rho(problem)
    if warm_start is not None:
        z0 = {k: v.astype(problem.dtype) for k, v in warm_start.primal.items()}
        s0 = problem.slacks(warm_start.dual)
        p = {k: z0[k] - s0[k] / cscale / rho for k in z0}
    else:
        p = problem.identity_point()
    pv = _flatten(problem, p)
    accel = _Anderson(cfg.anderson) if cfg.anderson else None
    history = []
    trace_fh = open(cfg.trace, "w", newline="") if cfg.trace else None
    writer = csv.writer(trace_fh) if trace_fh else None
    if writer:
        writer.writerow(["iteration", "primal_res", "dual_res", "gap", "primal_obj", "dual_obj", "rho"])
    status = "max_iters"
    y = {c_.name: np.zeros((c_.size, c_.size), dtype=problem.dtype) for c_ in problem.constraints}
    best = None
    growth_ref = None
    base_point = None  # (p, residual norm) from which the last accelerated step started
    it = 0
    try:
        for it in range(1, cfg.max_iters + 1):
            p = _unflatten(problem, pv)
            z = project_cone(problem, p)
            x = proj({k: 2 * z[k] - p[k] - c[k] / rho for k in z})
            g = cfg.alpha * (_flatten(problem, x) - _flatten(problem, z))
            gnorm = np.linalg.norm(g)
            if accel is not None:
                if base_point is not None and gnorm > cfg.safeguard * base_point[1]:
                    # reject the extrapolated point; plain step from the base point
                    pv = base_point[0] + base_point[2]
                    accel.reset()
                    base_point = None
                else:
                    base_point = (pv, gnorm, g)
                    pv = accel.step(pv, g)
            else:
                pv = pv + g
            if it % cfg.check_every and it != cfg.max_iters:
                continue
            u = {k: p[k] - z[k] for k in z}
            s = {k: -rho * u[k] * cscale for k in u}
            target = {lab: problem.cost(lab) - s[lab] for lab in problem.labels}
            y = proj.multipliers(target, y)
            rp, rd, gap = residuals(problem, z, y)
            pobj, dobj = problem.primal_objective(z), problem.dual_objective(y)
            history.append((it, rp, rd, gap, pobj, dobj, rho))
            if writer:
                writer.writerow([it, rp, rd, gap, pobj, dobj, rho])
            if cfg.verbose:
                print(f"{it:7d} rp={rp:.2e} rd={rd:.2e} gap={gap:.2e} p={pobj:.10f} d={dobj:.10f} rho={rho:.2e}")
            score = max(rp / cfg.eps_primal, rd / cfg.eps_dual, gap / cfg.eps_gap)
            if best is None or score < best[0]:
                best = (score, {k: v.copy() for k, v in z.items()}, {k: v.copy() for k, v in y.items()}, it)
            if rp <= cfg.eps_primal and rd <= cfg.eps_dual and gap <= cfg.eps_gap:
                status = "optimal"
                break
            if cfg.dual_stop and _dual_settled(history, cfg):
                status = "dual_optimal"
                best = (score, {k: v.copy() for k, v in z.items()}, {k: v.copy() for k, v in y.items()}, it)
                break
            if not np.all(np.isfinite(pv)):
                status = "infeasible_flag"
                break
            if growth_ref is None or it % 10000 < cfg.check_every:
                if growth_ref is not None and score > 1e3 * growth_ref:
                    status = "infeasible_flag"
                    break
                growth_ref = score
            if cfg.time_limit is not None and time.perf_counter() - t0 > cfg.time_limit:
                break
            if cfg.adaptive_rho:
                # balance primal infeasibility against dual infeasibility
                ratio = (rp / cfg.eps_primal) / max(rd / cfg.eps_dual, gap / cfg.eps_gap, 1e-300)
                new_rho = rho
                if ratio > 10:
                    new_rho = rho * 2.0
                elif ratio < 0.1:
                    new_rho = rho / 2.0
                if new_rho != rho and cfg.rho_min <= new_rho <= cfg.rho_max:
                    # keep z fixed and rescale u = p - z
                    zf = _flatten(problem, project_cone(problem, _unflatten(problem, pv)))
                    pv = zf + (pv - zf) * (rho / new_rho)
                    rho = new_rho
                    base_point = None
                    if accel is not None:
                        accel.reset()
    finally:
        if trace_fh:
            trace_fh.close()
    if status != "optimal" and best is not None:
        z, y = best[1], best[2]
    res = residuals(problem, z, y)
    return ConicSolution(
        primal=z,
        dual=y,
        epsilon=problem.dual_objective(y),
        primal_objective=problem.primal_objective(z),
        residuals=res,
        status=status,
        iterations=it,
        solve_time=time.perf_counter() - t0,
        history=history,
    )
