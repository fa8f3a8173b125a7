"""Rigorous lower bounds from approximately feasible dual solutions.

The dual of every relaxation reads ``max <b, y>`` subject to
``S_B(y) = C_B - (A^* y)_B >= 0`` on each PSD block ``B``. Only the
normalization row has a nonzero right-hand side, so the dual objective is the
multiplier ``eps`` of that row.

A solver returns ``y`` with slightly negative slacks. Walking from the deepest
block to the base, the multiplier of the block's correction row is shifted by
a multiple of the identity that lifts the block's slack to PSD. Because the
row acts on the block only through a partial trace, the shift adds exactly
``e * I`` to that slack and ``-e * W^*(I)`` to the slack of the shallower
block. For trace non-increasing ``W`` this is at least ``-e * I``, which the
next step absorbs. The base deficit is finally subtracted from ``eps``.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .tensor import min_eigenvalue

PAD_FACTOR = 10.0
FEASIBILITY_TOL = 1e-12


@dataclass
class CertifiedBound:
    value: float
    corrections: dict
    pre_certification_value: float
    trace_flags: dict
    margins: dict = field(default_factory=dict)
    dual: dict = field(default=None, repr=False)

    def to_dict(self):
        return {
            "value": self.value,
            "pre_certification_value": self.pre_certification_value,
            "corrections": self.corrections,
            "margins": self.margins,
            "trace_flags": self.trace_flags,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


class CertificationError(RuntimeError):
    pass


def _dual_of(solution):
    y = solution.dual if hasattr(solution, "dual") else solution
    return {k: np.array(v, copy=True) for k, v in y.items()}


def trace_audit(problem):
    """``trace_behavior`` of every channel, keyed by ``row:label``."""
    flags = {}
    for c in problem.constraints:
        for t in c.terms:
            for ch in t.channels:
                flags[f"{c.name}:{ch.label}"] = ch.trace_behavior
    return flags


def _correction_term(problem, block, row_name):
    row = problem.row(row_name)
    terms = [t for t in row.terms if t.block == block]
    if len(terms) != 1 or not terms[0].is_pure_trace:
        raise CertificationError(f"row {row_name} does not act on {block} by a partial trace alone")
    for t in row.terms:
        if t.block != block:
            for ch in t.channels:
                if ch.trace_behavior == "general":
                    raise CertificationError(f"channel {ch.label} in correction row {row_name} is not trace non-increasing")
    return terms[0]


def _block_min_eig(problem, slack, label):
    blk = problem.block(label)
    if blk.cone == "free":
        dev = float(np.abs(slack).max(initial=0.0))
        return -dev, 0.0
    return min_eigenvalue(slack)


def certify(problem, solution, pad_factor=PAD_FACTOR):
    """Shift the dual multipliers until every slack is PSD and return the bound.

    Parameters
    ----------
    problem : SdpProblem
    solution : ConicSolution or dict
        Dual multipliers ``y`` keyed by row name.
    pad_factor : float
        Each shift over-covers the deficit by this multiple of the eigensolver
        error estimate.

    Returns
    -------
    CertifiedBound
    """
    if any(b.cone == "free" for b in problem.blocks):
        raise CertificationError("problems with free blocks cannot be certified")
    y = _dual_of(solution)
    pre = problem.dual_objective(y)
    flags = trace_audit(problem)
    corrections = {}
    for label, row_name in problem.correction_rows.items():
        term = _correction_term(problem, label, row_name)
        slack = problem.slacks(y)[label]
        lam, err = _block_min_eig(problem, slack, label)
        deficit = max(0.0, -(lam - pad_factor * err))
        corrections[label] = deficit
        if deficit > 0:
            # the row contributes coef * tr^*(y_row) = coef * y_row (x) I to A^* y
            y[row_name] = y[row_name] + (deficit / -term.coef) * np.eye(y[row_name].shape[0])
    base = problem.normalization
    norm_rows = [c for c in problem.constraints if c.b is not None]
    if len(norm_rows) != 1 or norm_rows[0].size != 1:
        raise CertificationError("expected a single scalar normalization row")
    nrow = norm_rows[0]
    nterm = [t for t in nrow.terms if t.block == base]
    if len(nterm) != 1 or not nterm[0].is_pure_trace:
        raise CertificationError("normalization row must be the trace of the base block")
    lam, err = _block_min_eig(problem, problem.slacks(y)[base], base)
    deficit = max(0.0, -(lam - pad_factor * err))
    corrections[base] = deficit
    if deficit > 0:
        y[nrow.name] = y[nrow.name] - deficit / nterm[0].coef
    value = problem.dual_objective(y)
    report = verify_feasibility(problem, y)
    if not report["pass"]:
        raise CertificationError(f"corrected dual still infeasible: {report['min_eigenvalues']}")
    return CertifiedBound(float(value), corrections, float(pre), flags, report["min_eigenvalues"], y)


def verify_feasibility(problem, solution, tol=FEASIBILITY_TOL):
    """Minimal eigenvalue of every dual slack; passes iff all are ``>= -tol``."""
    y = _dual_of(solution)
    slacks = problem.slacks(y)
    mins = {}
    for b in problem.blocks:
        mins[b.label] = _block_min_eig(problem, slacks[b.label], b.label)[0]
    return {"min_eigenvalues": mins, "pass": all(v >= -tol for v in mins.values()), "dual_objective": problem.dual_objective(y)}


def inject_deficit(problem, solution, label, delta):
    """Copy of the dual with the slack of ``label`` lowered by ``delta * I``.

    The shift is applied through the block's correction row (or the
    normalization row for the base block), so other slacks move only through
    the channels of that row.
    """
    y = _dual_of(solution)
    if label == problem.normalization:
        nrow = [c for c in problem.constraints if c.b is not None][0]
        term = [t for t in nrow.terms if t.block == label][0]
        y[nrow.name] = y[nrow.name] + delta / term.coef
        return y
    row_name = problem.correction_rows[label]
    term = _correction_term(problem, label, row_name)
    y[row_name] = y[row_name] - (delta / -term.coef) * np.eye(y[row_name].shape[0])
    return y


def shift_invariance_probe(problem, solution, row_name, c):
    """Slack change when a translation-row multiplier is shifted by ``c * I``."""
    y = _dual_of(solution)
    base = problem.slacks(y)
    y[row_name] = y[row_name] + c * np.eye(y[row_name].shape[0])
    moved = problem.slacks(y)
    return max(float(np.abs(moved[k] - base[k]).max()) for k in base)

