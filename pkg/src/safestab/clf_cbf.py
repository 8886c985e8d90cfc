"""CLF/CBF certificate terms, single-objective universal control laws,
the compatibility test, and the generalized (min-norm) universal formula.

Conventions used throughout:

* CLF condition:  a(x) + b(x) u <= -kappa * zeta(x)
  with a = grad(V) . f + lambda * V,  b = grad(V) . g,
  zeta = sqrt(a^2 + phi(x) * ||b||^4).
* CBF condition:  c(x) + d(x) u >= rho * gamma(x)
  with c = grad(h) . f + beta * h,  d = grad(h) . g,
  gamma = sqrt(c^2 + varphi(x) * ||d||^4).

The generalized formula classifies each state into one of four regions
(P1: CLF constraint active, P2: CBF active, P3: both active, P4: neither)
and returns the closed-form minimum-norm input for that region.  Region
membership is decided by the sign tests on

    v = (a + kappa*zeta) d.b - (c - rho*gamma) b.b
    w = (a + kappa*zeta) d.d - (c - rho*gamma) b.d

which are exactly the (scaled) Lagrange multipliers of the two-constraint
least-norm problem, so the piecewise law coincides with the QP solution.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

PARALLEL_TOL = 1e-9  # |cos| within this of 1 counts as parallel rows


class DegenerateGeometry(RuntimeError):
    """Both-active region requested with a singular constraint geometry."""


class IncompatiblePoint(RuntimeError):
    """No input satisfies both conditions at this state; carries v, w diagnostics."""

    def __init__(self, message: str, v: float, w: float):
        super().__init__(message)
        self.v = v
        self.w = w


def _const_one(_x) -> float:
    return 1.0


@dataclass(frozen=True)
class ClfSpec:
    """Control Lyapunov function: value V, gradient dV/dx, and shaping constants.

    ``lam`` is the decay-rate weight in a = L_f V + lam * V; ``kappa``
    scales the zeta term of the tightened decrease condition; ``phi`` is
    the nonnegative shaping function inside zeta (defaults to 1).
    """

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    lam: float = 0.0
    kappa: float = 0.0
    phi: Callable[[np.ndarray], float] = _const_one

    def __post_init__(self):
        if self.lam < 0 or self.kappa < 0:
            raise ValueError("lam and kappa must be nonnegative")


@dataclass(frozen=True)
class CbfSpec:
    """Control barrier function: value h, gradient dh/dx, and shaping constants.

    The safe set is {x : h(x) >= 0}.  ``beta`` weighs h in
    c = L_f h + beta * h; ``rho`` scales the gamma margin; ``varphi`` is
    the nonnegative shaping function inside gamma (defaults to 1).
    """

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    beta: float = 0.0
    rho: float = 0.0
    varphi: Callable[[np.ndarray], float] = _const_one

    def __post_init__(self):
        if self.beta < 0 or self.rho < 0:
            raise ValueError("beta and rho must be nonnegative")


@dataclass(frozen=True)
class ClfTerms:
    """Pointwise CLF quantities a, b, zeta at one state."""

    a: float
    b: np.ndarray
    zeta: float


@dataclass(frozen=True)
class CbfTerms:
    """Pointwise CBF quantities c, d, gamma at one state."""

    c: float
    d: np.ndarray
    gamma: float


class CompatibilityStatus(enum.Enum):
    NON_PARALLEL = "NonParallel"
    PARALLEL_V_OK = "ParallelVOk"
    PARALLEL_W_OK = "ParallelWOk"
    INCOMPATIBLE = "Incompatible"


@dataclass(frozen=True)
class ControlDecision:
    """Input chosen by a universal formula, plus audit data.

    ``margins`` is the pair (a + b.u + kappa*zeta, c + d.u - rho*gamma):
    the first is the CLF slack (feasible when <= 0), the second the CBF
    slack (feasible when >= 0).  ``multipliers`` are the active-set
    Lagrange multipliers (lambda1, lambda2) when both constraints bind.
    """

    u: np.ndarray
    region: str
    margins: Tuple[float, float]
    multipliers: Optional[Tuple[float, float]] = None


def clf_terms(clf: ClfSpec, system, x, t: float = 0.0) -> ClfTerms:
    """Evaluate a = grad V . f + lam V, b = grad V . g, and zeta at x."""
    x = np.asarray(x, dtype=float)
    grad = np.asarray(clf.gradient(x), dtype=float).reshape(-1)
    a = float(grad @ system.f(x, t) + clf.lam * clf.value(x))
    b = np.asarray(grad @ system.g(x), dtype=float).reshape(-1)
    zeta = float(np.sqrt(a * a + float(clf.phi(x)) * float(b @ b) ** 2))
    return ClfTerms(a=a, b=b, zeta=zeta)


def cbf_terms(cbf: CbfSpec, system, x, t: float = 0.0) -> CbfTerms:
    """Evaluate c = grad h . f + beta h, d = grad h . g, and gamma at x."""
    x = np.asarray(x, dtype=float)
    grad = np.asarray(cbf.gradient(x), dtype=float).reshape(-1)
    c = float(grad @ system.f(x, t) + cbf.beta * cbf.value(x))
    d = np.asarray(grad @ system.g(x), dtype=float).reshape(-1)
    gamma = float(np.sqrt(c * c + float(cbf.varphi(x)) * float(d @ d) ** 2))
    return CbfTerms(c=c, d=d, gamma=gamma)


def sontag_clf_control(terms: ClfTerms, kappa: float) -> np.ndarray:
    """Minimum-norm input meeting the CLF decrease condition (zero when b = 0)."""
    b = terms.b
    bb = float(b @ b)
    if bb == 0.0:
        return np.zeros_like(b)
    return (-(terms.a + kappa * terms.zeta) / bb) * b


def cbf_universal_control(terms: CbfTerms, rho: float) -> np.ndarray:
    """Minimum-norm input meeting the CBF condition (zero when d = 0)."""
    d = terms.d
    dd = float(d @ d)
    if dd == 0.0:
        return np.zeros_like(d)
    return ((rho * terms.gamma - terms.c) / dd) * d


def _vw(p: float, q: float, b: np.ndarray, d: np.ndarray) -> Tuple[float, float]:
    """Multiplier numerators for shifted constraint levels p = a + kappa*zeta,
    q = c - rho*gamma."""
    v = p * float(d @ b) - q * float(b @ b)
    w = p * float(d @ d) - q * float(b @ d)
    return v, w


def _is_parallel(b: np.ndarray, d: np.ndarray) -> bool:
    nb = float(np.linalg.norm(b))
    nd = float(np.linalg.norm(d))
    if nb == 0.0 or nd == 0.0:
        raise ValueError("parallelism test requires nonzero b and d")
    return abs(abs(float(b @ d)) / (nb * nd) - 1.0) <= PARALLEL_TOL


def compatibility_status(clf_terms: ClfTerms, cbf_terms: CbfTerms,
                         kappa: float, rho: float) -> CompatibilityStatus:
    """Classify whether the two conditions admit a common input at this state.

    Non-parallel constraint rows are always compatible.  Parallel rows are
    compatible when v >= 0 (ParallelVOk) or w >= 0 (ParallelWOk), and
    incompatible only when both are negative.
    """
    b, d = clf_terms.b, cbf_terms.d
    if float(b @ b) == 0.0 or float(d @ d) == 0.0:
        raise ValueError("compatibility_status requires nonzero b and d")
    if not _is_parallel(b, d):
        return CompatibilityStatus.NON_PARALLEL
    p = clf_terms.a + kappa * clf_terms.zeta
    q = cbf_terms.c - rho * cbf_terms.gamma
    v, w = _vw(p, q, b, d)
    if v >= 0.0:
        return CompatibilityStatus.PARALLEL_V_OK
    if w >= 0.0:
        return CompatibilityStatus.PARALLEL_W_OK
    return CompatibilityStatus.INCOMPATIBLE


def universal_formula(clf_terms: ClfTerms, cbf_terms: CbfTerms,
                      kappa: float, rho: float) -> ControlDecision:
    """Closed-form minimum-norm input meeting the CLF and CBF conditions jointly.

    Branches are tested in the order P4, P1, P2, P3 with non-strict
    inequalities; on region boundaries the branch outputs coincide, so the
    order only pins determinism.  Raises :class:`IncompatiblePoint` when no
    branch applies (parallel rows with v < 0 and w < 0) and
    :class:`DegenerateGeometry` if the both-active system is singular.
    """
    a, b, zeta = clf_terms.a, clf_terms.b, clf_terms.zeta
    c, d, gamma = cbf_terms.c, cbf_terms.d, cbf_terms.gamma
    bb = float(b @ b)
    dd = float(d @ d)
    bd = float(b @ d)
    if bb == 0.0 or dd == 0.0:
        raise ValueError("universal_formula requires nonzero b and d")
    p = a + kappa * zeta
    q = c - rho * gamma
    v, w = _vw(p, q, b, d)

    def decision(u, region, multipliers=None):
        return ControlDecision(
            u=u,
            region=region,
            margins=(a + float(b @ u) + kappa * zeta, c + float(d @ u) - rho * gamma),
            multipliers=multipliers,
        )

    if p <= 0.0 and q >= 0.0:
        return decision(np.zeros_like(b), "P4", (0.0, 0.0))
    if p >= 0.0 and v <= 0.0:
        lam1 = p / bb
        return decision(-lam1 * b, "P1", (lam1, 0.0))
    if q <= 0.0 and w <= 0.0:
        lam2 = -q / dd
        return decision(lam2 * d, "P2", (0.0, lam2))
    if v >= 0.0 and w >= 0.0:
        det = bb * dd - bd * bd
        if _is_parallel(b, d) or det <= 0.0:
            raise DegenerateGeometry(
                f"both-active region with singular geometry (det={det:.3e})"
            )
        lam1 = w / det
        lam2 = v / det
        return decision(-lam1 * b + lam2 * d, "P3", (lam1, lam2))
    raise IncompatiblePoint(
        f"no input satisfies both conditions at this state (v={v:.6g}, w={w:.6g})", v, w
    )
