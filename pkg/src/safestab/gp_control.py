"""Combining GP posteriors with CLF/CBF conditions under model uncertainty.

The learned residual enters the certificates through two scalar margins,

    delta_v = grad(V) . mean(x) + sum_i beta_i |grad(V)_i| std_i(x)
    delta_h = grad(h) . mean(x) - sum_i beta_i |grad(h)_i| std_i(x)

which tighten the CLF/CBF conditions so that they imply the true-plant
conditions whenever the residual lies inside the per-coordinate confidence
tube.  On top of the shifted terms this module provides the tightened
universal formula, a probabilistic compatibility check, the
stability-relaxed formula (safety hard, CLF decrease bought with a
quadratic slack), and a box projection for input limits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .clf_cbf import (
    CbfSpec,
    CbfTerms,
    ClfSpec,
    ClfTerms,
    CompatibilityStatus,
    ControlDecision,
    _is_parallel,
    _vw,
    universal_formula,
)


class UnsafeState(RuntimeError):
    """The CBF condition is violated and no input can restore it (d = 0)."""


@dataclass(frozen=True)
class UncertaintyMargins:
    """CLF/CBF condition shifts induced by the learned residual.

    ``clf_contributions`` and ``cbf_contributions`` hold the per-coordinate
    confidence terms beta_i |grad_i| std_i for diagnostics.
    """

    delta_v: float
    delta_h: float
    clf_contributions: np.ndarray
    cbf_contributions: np.ndarray


ZERO_MARGINS = UncertaintyMargins(0.0, 0.0, np.zeros(0), np.zeros(0))


@dataclass(frozen=True)
class ControlLimits:
    """Componentwise input box."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape:
            raise ValueError("lower and upper must have the same shape")
        if np.any(lower > upper):
            raise ValueError("lower must be <= upper componentwise")


@dataclass(frozen=True)
class RelaxedDecision:
    """Outcome of the stability-relaxed formula.

    ``slack`` is the CLF relaxation actually used (>= 0); ``margins`` is
    (a~ + b.u + kappa*zeta, c~ + d.u - rho*gamma) evaluated on the shifted
    terms.  The CBF margin is never below -1e-9; the CLF margin can be
    positive and then equals the slack.
    """

    u: np.ndarray
    slack: float
    region: str
    margins: Tuple[float, float]
    multipliers: Optional[Tuple[float, float]] = None


def uncertainty_margins(clf: ClfSpec, cbf: CbfSpec, posterior, beta, x,
                        mode: str = "elementwise") -> UncertaintyMargins:
    """Evaluate the margins at x from a fitted posterior.

    ``mode`` selects the bound on the confidence term: "elementwise"
    (default, per-coordinate intervals) or "cauchy-schwarz"
    (max(beta) * ||grad|| * ||std||, looser; kept for comparison).
    """
    x = np.asarray(x, dtype=float)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if np.any(beta < 0):
        raise ValueError("beta must be nonnegative")
    mean, std = posterior.predict(x)
    grad_v = np.asarray(clf.gradient(x), dtype=float).reshape(-1)
    grad_h = np.asarray(cbf.gradient(x), dtype=float).reshape(-1)
    if mode == "elementwise":
        v_conf = beta * np.abs(grad_v) * std
        h_conf = beta * np.abs(grad_h) * std
    elif mode == "cauchy-schwarz":
        bmax = float(beta.max()) if beta.size else 0.0
        v_conf = np.full_like(grad_v, bmax * np.linalg.norm(grad_v) * np.linalg.norm(std) / max(len(grad_v), 1))
        h_conf = np.full_like(grad_h, bmax * np.linalg.norm(grad_h) * np.linalg.norm(std) / max(len(grad_h), 1))
    else:
        raise ValueError(f"unknown margin mode {mode!r}")
    return UncertaintyMargins(
        delta_v=float(grad_v @ mean + v_conf.sum()),
        delta_h=float(grad_h @ mean - h_conf.sum()),
        clf_contributions=v_conf,
        cbf_contributions=h_conf,
    )


@dataclass(frozen=True)
class ProbabilisticCompatibility:
    """Compatibility verdict for the uncertainty-shifted conditions.

    ``clf_margin_ok`` / ``cbf_margin_ok`` report the sufficient conditions
    delta_v d.b - delta_h b.b >= 0 and delta_v d.d - delta_h b.d >= 0,
    which preserve a nominal parallel-compatible point under the shifts.
    """

    status: CompatibilityStatus
    clf_margin_ok: bool
    cbf_margin_ok: bool
    v_tilde: float
    w_tilde: float


def probabilistic_compatibility(clf_terms: ClfTerms, cbf_terms: CbfTerms,
                                margins: UncertaintyMargins,
                                kappa: float, rho: float) -> ProbabilisticCompatibility:
    """Compatibility test with a -> a + delta_v and c -> c + delta_h."""
    b, d = clf_terms.b, cbf_terms.d
    bb = float(b @ b)
    dd = float(d @ d)
    bd = float(b @ d)
    if bb == 0.0 or dd == 0.0:
        raise ValueError("probabilistic_compatibility requires nonzero b and d")
    p = clf_terms.a + kappa * clf_terms.zeta
    q = cbf_terms.c - rho * cbf_terms.gamma
    v, w = _vw(p, q, b, d)
    v_tilde = v + margins.delta_v * bd - margins.delta_h * bb
    w_tilde = w + margins.delta_v * dd - margins.delta_h * bd
    if not _is_parallel(b, d):
        status = CompatibilityStatus.NON_PARALLEL
    elif v_tilde >= 0.0:
        status = CompatibilityStatus.PARALLEL_V_OK
    elif w_tilde >= 0.0:
        status = CompatibilityStatus.PARALLEL_W_OK
    else:
        status = CompatibilityStatus.INCOMPATIBLE
    return ProbabilisticCompatibility(
        status=status,
        clf_margin_ok=margins.delta_v * bd - margins.delta_h * bb >= 0.0,
        cbf_margin_ok=margins.delta_v * dd - margins.delta_h * bd >= 0.0,
        v_tilde=v_tilde,
        w_tilde=w_tilde,
    )


def _shifted(clf_terms: ClfTerms, cbf_terms: CbfTerms, margins: UncertaintyMargins):
    """Shift a and c by the margins; zeta and gamma keep their nominal values."""
    shifted_clf = ClfTerms(a=clf_terms.a + margins.delta_v, b=clf_terms.b, zeta=clf_terms.zeta)
    shifted_cbf = CbfTerms(c=cbf_terms.c + margins.delta_h, d=cbf_terms.d, gamma=cbf_terms.gamma)
    return shifted_clf, shifted_cbf


def gp_universal_formula(clf_terms: ClfTerms, cbf_terms: CbfTerms,
                         margins: UncertaintyMargins,
                         kappa: float, rho: float) -> ControlDecision:
    """Generalized universal formula on the uncertainty-shifted terms."""
    shifted_clf, shifted_cbf = _shifted(clf_terms, cbf_terms, margins)
    return universal_formula(shifted_clf, shifted_cbf, kappa, rho)


def relaxed_universal_formula(clf_terms: ClfTerms, cbf_terms: CbfTerms,
                              margins: UncertaintyMargins,
                              kappa: float, rho: float,
                              m_weight: float) -> RelaxedDecision:
    """Exact minimizer of  0.5 (||u||^2 + chi^2 / m_weight)  subject to

        a~ + b.u <= -kappa*zeta + chi      (CLF, relaxable)
        c~ + d.u >= rho*gamma              (CBF, hard)

    solved in closed form by enumerating the four active-set patterns with
    the slack eliminated analytically (stationarity gives chi = m * mu1, so
    the CLF-active rows see an effective denominator m + b.b).  Always
    feasible when d != 0; with d = 0 the CBF row is dropped if already
    satisfied and :class:`UnsafeState` is raised otherwise.
    """
    if m_weight <= 0:
        raise ValueError("m_weight must be positive")
    shifted_clf, shifted_cbf = _shifted(clf_terms, cbf_terms, margins)
    a, b, zeta = shifted_clf.a, shifted_clf.b, shifted_clf.zeta
    c, d, gamma = shifted_cbf.c, shifted_cbf.d, shifted_cbf.gamma
    m = float(m_weight)
    bb = float(b @ b)
    dd = float(d @ d)
    bd = float(b @ d)
    p = a + kappa * zeta
    q = c - rho * gamma

    def decision(u, chi, region, multipliers):
        return RelaxedDecision(
            u=u,
            slack=chi,
            region=region,
            margins=(a + float(b @ u) + kappa * zeta, c + float(d @ u) - rho * gamma),
            multipliers=multipliers,
        )

    if dd == 0.0:
        if q < 0.0:
            raise UnsafeState(
                f"CBF condition violated by {-q:.6g} with no input authority (d = 0)"
            )
        # CBF row satisfied and uncontrollable: slack-relaxed CLF alone.
        mu1 = max(p, 0.0) / (m + bb)
        return decision(-mu1 * b, m * mu1, "Pbar4" if p <= 0.0 else "Pbar1", (mu1, 0.0))

    v_bar = p * bd - q * (m + bb)
    w_bar = p * dd - q * bd

    if p <= 0.0 and q >= 0.0:
        return decision(np.zeros_like(b), 0.0, "Pbar4", (0.0, 0.0))
    if p >= 0.0 and v_bar <= 0.0:
        mu1 = p / (m + bb)
        return decision(-mu1 * b, m * mu1, "Pbar1", (mu1, 0.0))
    if q <= 0.0 and w_bar <= 0.0:
        mu2 = -q / dd
        return decision(mu2 * d, 0.0, "Pbar2", (0.0, mu2))
    # Both constraints active; the system is nonsingular for any m > 0.
    det = (m + bb) * dd - bd * bd
    mu1 = w_bar / det
    mu2 = v_bar / det
    return decision(-mu1 * b + mu2 * d, m * mu1, "Pbar3", (mu1, mu2))


def project_to_box(u, limits: ControlLimits) -> np.ndarray:
    """Nearest point of the input box: componentwise clamp."""
    u = np.asarray(u, dtype=float).reshape(-1)
    return np.clip(u, limits.lower, limits.upper)
