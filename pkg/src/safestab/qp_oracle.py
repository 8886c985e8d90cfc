"""Exhaustive active-set oracle for the pointwise min-norm problems.

Solves

    min_{u, chi}  0.5 ||u||^2 + 0.5 * slack_weight * chi^2
    s.t.          b . u - chi <= rhs_clf     (when clf_row present)
                  d . u       >= rhs_cbf     (when cbf_row present)

by enumerating every active-set pattern ({}, {clf}, {cbf}, {clf, cbf}),
solving the equality-constrained stationarity system of each, filtering by
primal feasibility and dual nonnegativity, and returning the feasible
candidate with the smallest objective.  Without ``slack_weight`` the CLF
row is a hard constraint (chi fixed at 0).

This is deliberately simpler than the closed-form control laws it
certifies: no region logic, no sign tests, just brute enumeration, so the
two can disagree only if one of them is wrong.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

FEAS_TOL = 1e-10   # absolute primal feasibility / dual nonnegativity tolerance
TIEBREAK_TOL = 1e-12  # objective ties resolved toward smaller active sets


@dataclass(frozen=True)
class PointwiseQp:
    """One- or two-constraint minimum-norm problem.

    ``clf_row`` is (b, rhs) for b . u <= rhs; ``cbf_row`` is (d, rhs) for
    d . u >= rhs.  ``slack_weight`` is the chi^2 objective weight (pass
    1/m for a relaxation penalized by chi^2 / m); absent means the CLF row
    is hard.
    """

    clf_row: Optional[Tuple[np.ndarray, float]] = None
    cbf_row: Optional[Tuple[np.ndarray, float]] = None
    slack_weight: Optional[float] = None

    def __post_init__(self):
        if self.clf_row is None and self.cbf_row is None:
            raise ValueError("at least one constraint row is required")
        if self.slack_weight is not None:
            if self.slack_weight <= 0:
                raise ValueError("slack_weight must be positive")
            if self.clf_row is None:
                raise ValueError("slack_weight without a clf_row has no effect")
        if self.clf_row is not None:
            vec, rhs = self.clf_row
            object.__setattr__(self, "clf_row", (np.asarray(vec, dtype=float).reshape(-1), float(rhs)))
        if self.cbf_row is not None:
            vec, rhs = self.cbf_row
            object.__setattr__(self, "cbf_row", (np.asarray(vec, dtype=float).reshape(-1), float(rhs)))

    @property
    def dim(self) -> int:
        row = self.clf_row if self.clf_row is not None else self.cbf_row
        return row[0].shape[0]


@dataclass(frozen=True)
class OracleSolution:
    u: np.ndarray
    slack: float
    active_set: Tuple[str, ...]
    objective: float
    multipliers: Tuple[float, float]


def oracle_objective(problem: PointwiseQp, u) -> float:
    """Objective value at u with the slack re-optimized for that u."""
    u = np.asarray(u, dtype=float).reshape(-1)
    chi = 0.0
    if problem.slack_weight is not None:
        b, rhs = problem.clf_row
        chi = max(0.0, float(b @ u) - rhs)
    return 0.5 * float(u @ u) + 0.5 * (problem.slack_weight or 0.0) * chi * chi


def _feasible(problem: PointwiseQp, u, chi) -> bool:
    if problem.clf_row is not None:
        b, rhs = problem.clf_row
        if float(b @ u) - chi > rhs + FEAS_TOL:
            return False
    if problem.cbf_row is not None:
        d, rhs = problem.cbf_row
        if float(d @ u) < rhs - FEAS_TOL:
            return False
    return True


def solve_min_norm(problem: PointwiseQp) -> Optional[OracleSolution]:
    """Enumerate all active-set patterns; return the best feasible candidate.

    Returns ``None`` when every pattern is infeasible or skipped (only
    possible with contradictory hard constraints).
    """
    m = problem.dim
    has_clf = problem.clf_row is not None
    has_cbf = problem.cbf_row is not None
    ws = problem.slack_weight
    # Effective diagonal boost for an active CLF row: stationarity of the
    # slack gives chi = mu1 / ws, adding 1/ws to the row's Gram entry.
    boost = (1.0 / ws) if ws is not None else 0.0

    candidates = []

    def consider(u, chi, mu1, mu2, active):
        if mu1 < -FEAS_TOL or mu2 < -FEAS_TOL:
            return
        if not _feasible(problem, u, chi):
            return
        obj = 0.5 * float(u @ u) + (0.5 * ws * chi * chi if ws is not None else 0.0)
        candidates.append(OracleSolution(
            u=u, slack=chi, active_set=active, objective=obj, multipliers=(mu1, mu2),
        ))

    consider(np.zeros(m), 0.0, 0.0, 0.0, ())

    if has_clf:
        b, r1 = problem.clf_row
        bb = float(b @ b)
        denom = bb + boost
        if denom > 0.0:
            mu1 = -r1 / denom
            u = -mu1 * b
            chi = mu1 / ws if ws is not None else 0.0
            consider(u, chi, mu1, 0.0, ("clf",))

    if has_cbf:
        d, r2 = problem.cbf_row
        dd = float(d @ d)
        if dd > 0.0:
            mu2 = r2 / dd
            consider(mu2 * d, 0.0, 0.0, mu2, ("cbf",))

    if has_clf and has_cbf:
        b, r1 = problem.clf_row
        d, r2 = problem.cbf_row
        bb = float(b @ b)
        dd = float(d @ d)
        bd = float(b @ d)
        A = np.array([[bb + boost, -bd], [-bd, dd]])
        scale = max(abs(A).max(), 1.0)
        if abs(np.linalg.det(A)) > 1e-14 * scale * scale:
            mu1, mu2 = np.linalg.solve(A, np.array([-r1, r2]))
            u = -mu1 * b + mu2 * d
            chi = mu1 / ws if ws is not None else 0.0
            consider(u, chi, float(mu1), float(mu2), ("clf", "cbf"))

    if not candidates:
        return None
    best = min(candidates, key=lambda cand: (cand.objective, len(cand.active_set)))
    ties = [cand for cand in candidates if cand.objective <= best.objective + TIEBREAK_TOL]
    return min(ties, key=lambda cand: len(cand.active_set))
