"""Control-affine systems, a fixed-step RK4 integrator, and trajectory logging.

Systems have the form  x' = f(x) + g(x) u,  optionally augmented with a
state-dependent disturbance  w(x)  that models unmodeled dynamics.  The
disturbance belongs to the plant only: controllers never see it, the
simulator and test oracles do.

Controllers are callables ``u = controller(x, t)`` returning an input
vector of shape (m,).  Controllers that additionally expose a
``step(x, t) -> ControllerStep`` method get their diagnostics (certificate
values, region label, uncertainty margins) recorded in the trajectory log.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class ContractViolation(ValueError):
    """An evaluator returned a value whose shape or finiteness breaks its contract."""


class IntegrationError(RuntimeError):
    """A non-finite value appeared inside an integration stage."""


class SimulationError(RuntimeError):
    """Simulation aborted; ``partial_log`` holds the samples recorded so far."""

    def __init__(self, message: str, partial_log: "TrajectoryLog"):
        super().__init__(message)
        self.partial_log = partial_log


def _as_vector(value, dim: int, what: str) -> np.ndarray:
    v = np.asarray(value, dtype=float).reshape(-1)
    if v.shape != (dim,):
        raise ContractViolation(f"{what} has shape {np.shape(value)}, expected ({dim},)")
    if not np.all(np.isfinite(v)):
        raise ContractViolation(f"{what} is not finite: {v}")
    return v


class ControlAffineSystem:
    """Control-affine dynamics x' = f(x, t) + g(x) u.

    Parameters
    ----------
    state_dim, input_dim:
        Dimensions n and m.
    drift:
        Callable (x, t) -> (n,) drift field f.
    input_map:
        Callable (x,) -> (n, m) input matrix g.
    exogenous:
        Optional callable (t,) -> float recorded alongside trajectories
        (e.g. the lead vehicle's acceleration).  Purely observational here;
        a system that depends on it must close over it in ``drift``.
    """

    def __init__(self, state_dim: int, input_dim: int, drift, input_map, exogenous=None):
        if state_dim <= 0 or input_dim <= 0:
            raise ValueError("state_dim and input_dim must be positive")
        self.state_dim = int(state_dim)
        self.input_dim = int(input_dim)
        self._drift = drift
        self._input_map = input_map
        self.exogenous = exogenous

    def f(self, x: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Drift field at (x, t), validated to shape (n,) and finite."""
        return _as_vector(self._drift(x, t), self.state_dim, "drift(x, t)")

    def g(self, x: np.ndarray) -> np.ndarray:
        """Input matrix at x, validated to shape (n, m) and finite."""
        G = np.asarray(self._input_map(x), dtype=float)
        if G.shape != (self.state_dim, self.input_dim):
            raise ContractViolation(
                f"input_map(x) has shape {G.shape}, expected ({self.state_dim}, {self.input_dim})"
            )
        if not np.all(np.isfinite(G)):
            raise ContractViolation("input_map(x) is not finite")
        return G

    def exogenous_value(self, t: float) -> float:
        return float(self.exogenous(t)) if self.exogenous is not None else 0.0


class UncertainSystem:
    """A nominal model plus the ground-truth disturbance w(x).

    ``nominal`` is what controllers are built from; ``disturbance`` is the
    unmodeled part of the true plant.  The closed-loop field of this object
    is the nominal field plus ``disturbance(x)``, so the pair represents
    the true dynamics.
    """

    def __init__(self, nominal: ControlAffineSystem, disturbance: Callable[[np.ndarray], np.ndarray]):
        self.nominal = nominal
        self._disturbance = disturbance

    @property
    def state_dim(self) -> int:
        return self.nominal.state_dim

    @property
    def input_dim(self) -> int:
        return self.nominal.input_dim

    @property
    def exogenous(self):
        return self.nominal.exogenous

    def f(self, x: np.ndarray, t: float = 0.0) -> np.ndarray:
        return self.nominal.f(x, t)

    def g(self, x: np.ndarray) -> np.ndarray:
        return self.nominal.g(x)

    def disturbance(self, x: np.ndarray) -> np.ndarray:
        return _as_vector(self._disturbance(x), self.state_dim, "disturbance(x)")

    def exogenous_value(self, t: float) -> float:
        return self.nominal.exogenous_value(t)


@dataclass
class ControllerStep:
    """One controller evaluation plus diagnostics for logging."""

    u: np.ndarray
    clf_value: float = float("nan")
    cbf_value: float = float("nan")
    region: str = ""
    delta_v: float = 0.0
    delta_h: float = 0.0
    slack: float = 0.0


@dataclass(frozen=True)
class TrajectoryLog:
    """Uniformly sampled closed-loop record.

    All arrays share the leading length; ``times`` is strictly increasing
    with uniform spacing.
    """

    times: np.ndarray          # (N,)
    states: np.ndarray         # (N, n)
    controls: np.ndarray       # (N, m)
    clf_values: np.ndarray     # (N,)
    cbf_values: np.ndarray     # (N,)
    regions: tuple             # (N,) of str
    exogenous_values: np.ndarray  # (N,)
    delta_v: np.ndarray        # (N,)
    delta_h: np.ndarray        # (N,)
    slacks: np.ndarray         # (N,)

    def __post_init__(self):
        n = len(self.times)
        for name in ("states", "controls", "clf_values", "cbf_values",
                     "regions", "exogenous_values", "delta_v", "delta_h", "slacks"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"TrajectoryLog.{name} length != len(times)")
        if n > 1:
            dts = np.diff(self.times)
            if np.any(dts <= 0) or not np.allclose(dts, dts[0], rtol=1e-9, atol=1e-12):
                raise ValueError("times must be strictly increasing with uniform spacing")

    def __len__(self) -> int:
        return len(self.times)


def closed_loop_field(system, controller, x: np.ndarray, t: float) -> np.ndarray:
    """Evaluate x' = f(x,t) + g(x) u(x,t) (+ w(x) for uncertain systems)."""
    x = np.asarray(x, dtype=float)
    u = _as_vector(controller(x, t), system.input_dim, "controller output")
    dx = system.f(x, t) + system.g(x) @ u
    if isinstance(system, UncertainSystem):
        dx = dx + system.disturbance(x)
    return dx


def rk4_step(fieldfn, x: np.ndarray, t: float, dt: float) -> np.ndarray:
    """Classical 4-stage Runge-Kutta update of x over [t, t + dt]."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(fieldfn(x, t), dtype=float)
    k2 = np.asarray(fieldfn(x + 0.5 * dt * k1, t + 0.5 * dt), dtype=float)
    k3 = np.asarray(fieldfn(x + 0.5 * dt * k2, t + 0.5 * dt), dtype=float)
    k4 = np.asarray(fieldfn(x + dt * k3, t + dt), dtype=float)
    for name, k in (("k1", k1), ("k2", k2), ("k3", k3), ("k4", k4)):
        if not np.all(np.isfinite(k)):
            raise IntegrationError(f"non-finite value in RK4 stage {name} at t={t}")
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class _LogBuilder:
    def __init__(self, n: int, m: int):
        self.times = []
        self.states = []
        self.controls = []
        self.clf_values = []
        self.cbf_values = []
        self.regions = []
        self.exo = []
        self.delta_v = []
        self.delta_h = []
        self.slacks = []
        self._n = n
        self._m = m

    def append(self, t, x, step: ControllerStep, exo: float):
        self.times.append(float(t))
        self.states.append(np.array(x, dtype=float))
        self.controls.append(np.array(step.u, dtype=float))
        self.clf_values.append(float(step.clf_value))
        self.cbf_values.append(float(step.cbf_value))
        self.regions.append(step.region)
        self.exo.append(float(exo))
        self.delta_v.append(float(step.delta_v))
        self.delta_h.append(float(step.delta_h))
        self.slacks.append(float(step.slack))

    def freeze(self) -> TrajectoryLog:
        n = len(self.times)
        return TrajectoryLog(
            times=np.asarray(self.times),
            states=np.asarray(self.states).reshape(n, self._n),
            controls=np.asarray(self.controls).reshape(n, self._m),
            clf_values=np.asarray(self.clf_values),
            cbf_values=np.asarray(self.cbf_values),
            regions=tuple(self.regions),
            exogenous_values=np.asarray(self.exo),
            delta_v=np.asarray(self.delta_v),
            delta_h=np.asarray(self.delta_h),
            slacks=np.asarray(self.slacks),
        )


def _evaluate_controller(controller, system, x, t) -> ControllerStep:
    if hasattr(controller, "step"):
        step = controller.step(x, t)
    else:
        step = ControllerStep(u=controller(x, t))
    step.u = _as_vector(step.u, system.input_dim, "controller output")
    return step


def simulate(system, controller, x0, horizon: float, dt: float) -> TrajectoryLog:
    """Integrate the closed loop with zero-order-held control.

    The controller is evaluated once per step at the step's start state and
    held constant across the RK4 substages.  Returns floor(horizon/dt) + 1
    samples at t = 0, dt, 2*dt, ...

    Raises :class:`SimulationError` (carrying the partial log) if the
    controller fails or the state leaves the finite range.
    """
    if horizon <= 0 or dt <= 0:
        raise ValueError("horizon and dt must be positive")
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (system.state_dim,):
        raise ContractViolation(f"x0 has shape {x.shape}, expected ({system.state_dim},)")
    if not np.all(np.isfinite(x)):
        raise ContractViolation("x0 is not finite")

    n_steps = int(np.floor(horizon / dt + 1e-9))
    builder = _LogBuilder(system.state_dim, system.input_dim)
    uncertain = isinstance(system, UncertainSystem)

    for k in range(n_steps + 1):
        t = k * dt
        try:
            step = _evaluate_controller(controller, system, x, t)
        except Exception as exc:
            raise SimulationError(f"controller failed at t={t}: {exc}", builder.freeze()) from exc
        builder.append(t, x, step, system.exogenous_value(t))
        if k == n_steps:
            break
        u = step.u

        def field(xc, tc):
            dx = system.f(xc, tc) + system.g(xc) @ u
            if uncertain:
                dx = dx + system.disturbance(xc)
            return dx

        try:
            x = rk4_step(field, x, t, dt)
        except (IntegrationError, ContractViolation) as exc:
            raise SimulationError(f"integration failed on step {k}: {exc}", builder.freeze()) from exc
        if not np.all(np.isfinite(x)):
            raise SimulationError(f"state became non-finite after step {k}", builder.freeze())

    return builder.freeze()
