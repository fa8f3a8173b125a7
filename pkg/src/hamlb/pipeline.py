"""Build, solve and certify one relaxation; grids of runs; summaries.

A run goes through model -> (ansatz) -> relaxation -> conic solve ->
certification and is written as a JSON :class:`RunResult`. Ansatzes are
cached on disk keyed by a hash of ``(kind, model, params, D, seed, N)``.
"""

import csv
import hashlib
import json
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .certify import CertificationError, certify
from .models import build_model, reference_density, sublattice_rotated
from .sdp import build_lti_single, build_mps_relaxation, build_ttn_relaxation
from .solver import SolverConfig, solve
from .ttn import load_ansatz, optimize_tree, save_ansatz, tree_energy
from .umps import energy_density, optimize_ground_state

METHODS = ("lti", "mps", "ttn")
SWEEP_COLUMNS = ["model", "method", "n", "D", "N_vars", "delta_E", "time", "certified", "status", "error"]


@dataclass
class RunRequest:
    """One relaxation to solve.

    ``rotate`` applies the sublattice rotation to XXZ-type models before the
    uniform MPS is optimized (``auto``: for ``mps`` runs only).
    """

    model: str
    method: str
    n: int
    params: dict = field(default_factory=dict)
    D: int = None
    seed: int = 0
    eps: float = 1e-7
    max_iters: int = 20000
    trace: str = None
    out: str = None
    rotate: str = "auto"
    solver: dict = field(default_factory=dict)
    cache: str = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.n is None or int(self.n) < 2:
            raise ValueError("n must be at least 2")
        self.n = int(self.n)
        if self.method in ("mps", "ttn") and self.D is None:
            raise ValueError(f"method {self.method!r} needs a bond dimension D")
        if self.method == "ttn":
            N = int(round(np.log2(self.n)))
            if 2**N != self.n or N < 3:
                raise ValueError("ttn needs n = 2**N with N >= 3")
        if self.rotate not in ("auto", "on", "off"):
            raise ValueError("rotate must be auto, on or off")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown request fields {sorted(extra)}")
        return cls(**data)


@dataclass
class RunResult:
    request: dict
    certified: float
    raw: float
    primal: float
    variational: float
    ansatz_energy: float
    reference: float
    reference_provenance: str
    delta_certified: float
    delta_upper: float
    status: str
    iterations: int
    residuals: list
    stats: dict
    corrections: dict
    ansatz: dict
    time: float
    error: str = None

    def to_dict(self):
        return asdict(self)

    def write(self, path):
        _atomic_write(path, json.dumps(self.to_dict(), indent=2, default=_json_default))


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _atomic_write(path, text):
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# ansatz cache


def default_cache_dir():
    return os.environ.get("HAMLB_CACHE", os.path.join(os.path.expanduser("~"), ".cache", "hamlb"))


def ansatz_key(kind, spec, D, seed, N=None):
    payload = json.dumps([kind, spec.name, sorted(spec.params.items()), int(D), int(seed), N])
    return hashlib.sha256(payload.encode()).hexdigest()[:20]


def cached_ansatz(kind, spec, D, seed=0, N=None, cache=None):
    """Uniform MPS (``kind='mps'``) or tree stack (``kind='ttn'``), reused from disk if present."""
    folder = cache or default_cache_dir()
    path = os.path.join(folder, f"{kind}-{ansatz_key(kind, spec, D, seed, N)}.json")
    if os.path.exists(path):
        return load_ansatz(path)
    if kind == "mps":
        obj = optimize_ground_state(spec, D, seed=seed)
    elif kind == "ttn":
        obj = optimize_tree(spec, N, D, seed=seed)
    else:
        raise ValueError(f"unknown ansatz kind {kind!r}")
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    os.close(fd)
    save_ansatz(obj, tmp)
    os.replace(tmp, path)
    return obj


# ---------------------------------------------------------------------------
# single run


def build_problem(req):
    """Problem, spec actually used and ansatz summary for a request."""
    spec = build_model(req.model, req.params)
    ansatz = {}
    upper = None
    energy = None
    if req.method == "lti":
        return build_lti_single(spec, req.n), spec, ansatz, upper, energy
    spec = _ansatz_spec(req)
    if req.method == "mps":
        mps = cached_ansatz("mps", spec, req.D, req.seed, cache=req.cache)
        upper = energy = energy_density(mps, spec)
        ansatz = {k: v for k, v in mps.info.items() if isinstance(v, (int, float, str, bool))}
        return build_mps_relaxation(spec, req.n, mps), spec, ansatz, upper, energy
    N = int(round(np.log2(req.n)))
    stack = cached_ansatz("ttn", spec, req.D, req.seed, N=N, cache=req.cache)
    # a finite-ring tree energy is not an upper bound on the infinite chain
    energy = tree_energy(stack, spec)
    ansatz = {k: v for k, v in stack.info.items() if isinstance(v, (int, float, str, bool))}
    return build_ttn_relaxation(spec, N, stack), spec, ansatz, upper, energy


def solver_config(req):
    base = dict(eps_primal=req.eps, eps_dual=req.eps, eps_gap=req.eps, max_iters=req.max_iters, trace=req.trace, dual_stop=True)
    base.update(req.solver or {})
    return SolverConfig(**base)


def run(req):
    """Execute one request; writes ``req.out`` when set.

    Returns
    -------
    RunResult
        ``status`` is the solver status; ``certified`` is ``None`` when
        certification was refused (see ``error``).
    """
    if isinstance(req, dict):
        req = RunRequest.from_dict(req)
    t0 = time.perf_counter()
    problem, spec, ansatz, upper, energy = build_problem(req)
    sol = solve(problem, solver_config(req))
    ref = reference_density(spec)
    certified, corrections, error = None, {}, None
    try:
        cb = certify(problem, sol)
        certified, corrections = cb.value, cb.corrections
    except CertificationError as exc:
        error = str(exc)
    result = RunResult(
        request=asdict(req),
        certified=certified,
        raw=float(sol.dual_objective),
        primal=float(sol.primal_objective),
        variational=upper,
        ansatz_energy=energy,
        reference=float(ref.value),
        reference_provenance=ref.provenance,
        delta_certified=None if certified is None else float(ref.value - certified),
        delta_upper=None if upper is None else float(upper - ref.value),
        status=sol.status,
        iterations=int(sol.iterations),
        residuals=[float(r) for r in sol.residuals],
        stats=problem.stats(),
        corrections={k: float(v) for k, v in corrections.items()},
        ansatz=ansatz,
        time=time.perf_counter() - t0,
        error=error,
    )
    if req.out:
        result.write(req.out)
    return result


def succeeded(result):
    return result.certified is not None and result.status in ("optimal", "dual_optimal")


# ---------------------------------------------------------------------------
# grids


def worker_count():
    try:
        return max(1, int(os.environ.get("HAMLB_THREADS", "1")))
    except ValueError:
        return 1


def expand_grid(grid):
    """Cartesian product of the list-valued ``n``, ``D`` and ``seed`` entries of ``grid``."""
    base = {k: v for k, v in grid.items() if k not in ("n", "D", "seed")}
    ns = _as_list(grid.get("n"))
    Ds = _as_list(grid.get("D", [None]))
    seeds = _as_list(grid.get("seed", [0]))
    out = []
    for D in Ds:
        for seed in seeds:
            for n in ns:
                out.append(RunRequest.from_dict(dict(base, n=n, D=D, seed=seed)))
    return out


def _as_list(v):
    if v is None:
        return [None]
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _cell(req):
    t0 = time.perf_counter()
    try:
        res = run(req)
        return {
            "model": req.model,
            "method": req.method,
            "n": req.n,
            "D": req.D,
            "N_vars": res.stats["scalars"],
            "delta_E": res.delta_certified,
            "time": res.time,
            "certified": res.certified,
            "status": res.status,
            "error": res.error,
        }
    except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
        return {"model": req.model, "method": req.method, "n": req.n, "D": req.D, "N_vars": None, "delta_E": None, "time": time.perf_counter() - t0, "certified": None, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def sweep(grid, out=None, workers=None):
    """Run every cell of ``grid``; failures are recorded and the sweep continues.

    Ansatzes shared between cells are built once before the cells are
    dispatched to a pool of ``workers`` processes (``HAMLB_THREADS``).
    """
    reqs = expand_grid(grid)
    for req in reqs:
        if req.method == "lti":
            continue
        try:
            spec = _ansatz_spec(req)
            kind = req.method
            N = int(round(np.log2(req.n))) if kind == "ttn" else None
            cached_ansatz(kind, spec, req.D, req.seed, N=N, cache=req.cache)
        except Exception:  # noqa: BLE001 - the cell itself will report the failure
            pass
    workers = workers or worker_count()
    if workers > 1 and len(reqs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_cell, reqs))
    else:
        rows = [_cell(r) for r in reqs]
    if out:
        write_table(rows, out)
    return rows


def _ansatz_spec(req):
    spec = build_model(req.model, req.params)
    if req.rotate == "on" or (req.rotate == "auto" and req.method == "mps"):
        spec = sublattice_rotated(spec)
    return spec


def write_table(rows, path):
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------------------
# summaries


def fit_loglog(ns, deltas):
    """Least-squares line ``log dE = a + s log n``; returns ``(s, a)``."""
    ns = np.asarray(ns, dtype=float)
    de = np.asarray(deltas, dtype=float)
    keep = de > 0
    if keep.sum() < 2:
        raise ValueError("need at least two positive points for a log-log fit")
    s, a = np.polyfit(np.log(ns[keep]), np.log(de[keep]), 1)
    return float(s), float(a)


def effective_n(slope, intercept, plateau):
    """``n`` at which the LTI fit line reaches ``plateau``."""
    if plateau <= 0:
        raise ValueError("plateau must be positive")
    if slope >= 0:
        raise ValueError("LTI fit must decrease")
    return float(np.exp((np.log(plateau) - intercept) / slope))


def load_rows(paths):
    """Rows from result JSON files and sweep CSV files."""
    rows = []
    for path in paths:
        if path.endswith(".csv"):
            with open(path) as fh:
                for r in csv.DictReader(fh):
                    rows.append(r)
        else:
            with open(path) as fh:
                data = json.load(fh)
            req = data["request"]
            rows.append({"model": req["model"], "method": req["method"], "n": req["n"], "D": req.get("D"), "delta_E": data.get("delta_certified")})
    out = []
    for r in rows:
        de = r.get("delta_E")
        if de in (None, "", "None"):
            continue
        D = r.get("D")
        out.append({"model": r["model"], "method": r["method"], "n": int(r["n"]), "D": None if D in (None, "", "None") else int(D), "delta_E": float(de)})
    return out


def report(paths, out=None):
    """LTI fit, MPS plateaus and effective ``n`` per model and ``D``.

    Returns ``(text, rows)``; ``rows`` is the plot-ready table also written to
    ``out`` as CSV.
    """
    rows = load_rows(paths)
    lines = []
    table = [dict(r, kind="point") for r in rows]
    for model in sorted({r["model"] for r in rows}):
        lti = sorted((r["n"], r["delta_E"]) for r in rows if r["model"] == model and r["method"] == "lti")
        if len(lti) < 2:
            lines.append(f"{model}: fewer than two LTI points, no fit")
            continue
        s, a = fit_loglog(*zip(*lti))
        lines.append(f"{model}: LTI fit dE ~ n^{s:.3f} (log-intercept {a:.3f}) over n={lti[0][0]}..{lti[-1][0]}")
        table.append({"model": model, "method": "lti-fit", "n": None, "D": None, "delta_E": None, "kind": f"slope={s:.6g};intercept={a:.6g}"})
        for D in sorted({r["D"] for r in rows if r["model"] == model and r["method"] == "mps" and r["D"] is not None}):
            pts = sorted((r["n"], r["delta_E"]) for r in rows if r["model"] == model and r["method"] == "mps" and r["D"] == D)
            plateau = min(de for _, de in pts)
            try:
                neff = effective_n(s, a, plateau)
            except ValueError as exc:
                lines.append(f"{model} D={D}: {exc}")
                continue
            lines.append(f"{model} D={D}: plateau dE={plateau:.3e} at n<={pts[-1][0]}, n_eff={neff:.1f}")
            table.append({"model": model, "method": "mps-neff", "n": neff, "D": D, "delta_E": plateau, "kind": "n_eff"})
    text = "\n".join(lines)
    if out:
        with open(out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["model", "method", "n", "D", "delta_E", "kind"])
            w.writeheader()
            w.writerows(table)
    return text, table
