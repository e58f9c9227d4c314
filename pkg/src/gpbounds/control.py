"""Strict-feedback simulation and GP-based backstepping with safety gains.

The plant is a cascade ``xdot_i = f_i(x_1..i) + g_i(x_1..i) x_{i+1}`` (with
the input u driving the last subsystem).  The unknown drifts f_i are replaced
by GP posterior means; each subsystem's tracking error is fed back with a
shared state-dependent gain sized from scaled posterior variances, so the
loop stiffens exactly where the models are uncertain.  Fictitious reference
derivatives come from first-order command filters rather than symbolic
differentiation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .gp import Dataset, GPModel, as_generator

__all__ = [
    "StrictFeedbackSystem",
    "DesiredTrajectory",
    "BacksteppingController",
    "Trajectory",
    "DivergenceError",
    "SingularGainError",
    "ManipulatorParams",
    "adaptive_gain",
    "backstepping_input",
    "simulate",
    "manipulator_system",
    "collect_training_data",
    "rk4_step",
]

GAIN_FLOOR = 1e-3
GAIN_SINGULAR_TOL = 1e-9
DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    """State norm blew past the divergence limit; carries the partial run."""

    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory


class SingularGainError(RuntimeError):
    """A known input gain g_i vanished where its inverse is needed."""


@dataclass(frozen=True, eq=False)
class StrictFeedbackSystem:
    """Cascade dynamics: per-subsystem drift f_i and known input gain g_i.

    ``f_true[i]`` and ``g[i]`` each map the first ``i + 1`` state coordinates
    to a scalar.  The drifts are ground truth for the simulator only; the
    controller sees them through GP models.
    """

    f_true: Sequence[Callable[[np.ndarray], float]]
    g: Sequence[Callable[[np.ndarray], float]]

    def __post_init__(self):
        if len(self.f_true) != len(self.g):
            raise ValueError("f_true and g must have one entry per subsystem")

    @property
    def m(self) -> int:
        return len(self.f_true)

    def drift(self, x: np.ndarray, u: float) -> np.ndarray:
        xdot = np.empty(self.m)
        for i in range(self.m):
            head = x[: i + 1]
            feed = u if i == self.m - 1 else x[i + 1]
            xdot[i] = self.f_true[i](head) + self.g[i](head) * feed
        return xdot


@dataclass(frozen=True)
class DesiredTrajectory:
    """Sinusoidal (or constant-zero) reference with analytic derivatives."""

    amplitude: float = 0.0
    frequency: float = 0.0
    offset: float = 0.0

    def derivative(self, order: int, t: float) -> float:
        if self.amplitude == 0.0:
            return self.offset if order == 0 else 0.0
        w = 2.0 * math.pi * self.frequency
        phase = w * t + 0.5 * math.pi * order
        value = self.amplitude * w**order * math.sin(phase)
        return value + (self.offset if order == 0 else 0.0)

    def value(self, t: float) -> float:
        return self.derivative(0, t)

    def state_vector(self, t: float, m: int) -> np.ndarray:
        return np.array([self.derivative(k, t) for k in range(m)])


def rk4_step(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of an autonomous field."""
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Simulation record: states, applied inputs, and tracking-error norms."""

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    error_norms: np.ndarray

    def __post_init__(self):
        k = self.times.size
        if not (self.states.shape[0] == k and self.inputs.size == k and self.error_norms.size == k):
            raise ValueError("trajectory arrays must share one length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


class BacksteppingController:
    """Command-filtered backstepping with variance-scaled shared gains.

    ``models`` supply the drift estimates (posterior means).  ``variance_models``
    and ``beta_bars`` size the gain: any objects exposing ``var_at`` work, so
    the same controller runs with robust envelopes, the working models, or a
    mixture-variance surrogate.
    """

    def __init__(
        self,
        models: Sequence[GPModel],
        variance_models: Sequence,
        beta_bars: Sequence[float],
        xi_des: float,
        filter_bandwidth: float = 100.0,
        gain_floor: float = GAIN_FLOOR,
    ):
        if not xi_des > 0.0:
            raise ValueError(f"xi_des must be positive, got {xi_des}")
        if not (len(models) == len(variance_models) == len(beta_bars)):
            raise ValueError("models, variance_models and beta_bars must align")
        self.models = list(models)
        self.variance_models = list(variance_models)
        self.beta_bars = [float(b) for b in beta_bars]
        self.xi_des = float(xi_des)
        self.filter_bandwidth = float(filter_bandwidth)
        self.gain_floor = float(gain_floor)
        self.m = len(models)
        self.reset()

    def reset(self) -> None:
        self._filter_state = None  # length m-1, reference for subsystems 2..m
        self._last_commands = None

    def gain_value(self, x: np.ndarray) -> float:
        """Raw state-dependent gain: scaled posterior variances over xi_des."""
        total = 0.0
        for j in range(self.m):
            var = float(self.variance_models[j].var_at(x[: j + 1][None, :])[0])
            total += self.beta_bars[j] * var
        return math.sqrt(total) / self.xi_des

    def gain(self, x: np.ndarray) -> float:
        """Gain actually applied in the loop: floored away from zero."""
        return max(self.gain_value(x), self.gain_floor)

    def control_input(self, system: StrictFeedbackSystem, x: np.ndarray, t: float, xd: DesiredTrajectory):
        """Control value u at state x and time t; does not advance filters.

        Recursion: each subsystem's fictitious reference cancels the model
        drift, tracks the filtered previous reference's derivative, and adds
        the gain feedback plus the cascade coupling correction.  Returns
        ``(u, errors)`` with the per-subsystem tracking errors.
        """
        x = np.asarray(x, dtype=float)
        m = self.m
        gain = self.gain(x)
        gvals = [system.g[i](x[: i + 1]) for i in range(m)]
        for i, gv in enumerate(gvals):
            if abs(gv) < GAIN_SINGULAR_TOL:
                raise SingularGainError(f"input gain g_{i + 1} = {gv:.3e} is numerically singular")
        mus = [float(self.models[i].mean_at(x[: i + 1][None, :])[0]) for i in range(m)]

        errors = np.empty(m)
        errors[0] = x[0] - xd.value(t)
        ref_dot = xd.derivative(1, t)
        commands = np.empty(max(m - 1, 0))
        init_filters = self._filter_state is None
        if init_filters and m > 1:
            self._filter_state = np.empty(m - 1)
        for i in range(m - 1):
            cmd = (-mus[i] + ref_dot - gain * errors[i] - (gvals[i - 1] * errors[i - 1] if i > 0 else 0.0)) / gvals[i]
            commands[i] = cmd
            if init_filters:
                self._filter_state[i] = cmd
            filtered = self._filter_state[i]
            errors[i + 1] = x[i + 1] - filtered
            ref_dot = self.filter_bandwidth * (cmd - filtered)
        u = (-mus[m - 1] + ref_dot - gain * errors[m - 1] - (gvals[m - 2] * errors[m - 2] if m > 1 else 0.0)) / gvals[m - 1]
        self._last_commands = commands
        return float(u), errors

    def advance_filters(self, dt: float) -> None:
        """Exact first-order filter update with the last commands held."""
        if self._filter_state is None or self._last_commands is None:
            return
        decay = math.exp(-self.filter_bandwidth * dt)
        self._filter_state += (self._last_commands - self._filter_state) * (1.0 - decay)


def adaptive_gain(ctrl: BacksteppingController, x: np.ndarray) -> float:
    """The raw gain formula; the controller floors it before use."""
    return ctrl.gain_value(np.asarray(x, dtype=float))


def backstepping_input(
    ctrl: BacksteppingController,
    system: StrictFeedbackSystem,
    x: np.ndarray,
    t: float,
    xd: DesiredTrajectory,
) -> float:
    u, _ = ctrl.control_input(system, np.asarray(x, dtype=float), t, xd)
    return u


def simulate(
    system: StrictFeedbackSystem,
    ctrl,
    x0: np.ndarray,
    duration: float,
    dt: float,
    xd: DesiredTrajectory = DesiredTrajectory(),
) -> Trajectory:
    """Fixed-step RK4 roll-out with the input held over each step.

    ``ctrl`` is either a :class:`BacksteppingController` or a plain callable
    ``(t, x) -> u`` (useful for open-loop excitation).  Raises
    :class:`DivergenceError`, carrying the partial trajectory, when the state
    norm passes the divergence limit.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x0, dtype=float).copy()
    m = system.m
    if x.size != m:
        raise ValueError(f"x0 has size {x.size} but the system has {m} states")
    is_controller = isinstance(ctrl, BacksteppingController)
    if is_controller:
        ctrl.reset()
    steps = int(round(duration / dt))
    times = np.empty(steps + 1)
    states = np.empty((steps + 1, m))
    inputs = np.empty(steps + 1)
    errors = np.empty(steps + 1)

    def record(k, t, u):
        times[k] = t
        states[k] = x
        inputs[k] = u
        errors[k] = float(np.linalg.norm(x - xd.state_vector(t, m)))

    u = 0.0
    for k in range(steps):
        t = k * dt
        if is_controller:
            u, _ = ctrl.control_input(system, x, t, xd)
        else:
            u = float(ctrl(t, x))
        record(k, t, u)
        x = rk4_step(lambda s: system.drift(s, u), x, dt)
        if is_controller:
            ctrl.advance_filters(dt)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_LIMIT:
            partial = Trajectory(times[: k + 1], states[: k + 1].copy(), inputs[: k + 1], errors[: k + 1])
            raise DivergenceError(f"state diverged at t={t + dt:.4f}", partial)
    record(steps, steps * dt, u)
    return Trajectory(times, states, inputs, errors)


@dataclass(frozen=True)
class ManipulatorParams:
    """Dimensionless one-link manipulator-with-motor constants."""

    inertia: float = 1.0  # D
    damping: float = 1.0  # B
    gravity: float = 10.0  # G
    load: float = 0.05  # M
    motor_damping: float = 0.5  # H
    coupling: float = 10.0  # Z


def manipulator_system(params: ManipulatorParams = ManipulatorParams()) -> StrictFeedbackSystem:
    """One-link manipulator with motor dynamics in strict-feedback form.

    State (angle, angular rate, torque):

        xdot_1 = x_2
        xdot_2 = (-B x_2 - G sin x_1) / D + (1 / D) x_3
        xdot_3 = -M - H x_3 - Z x_2 + u
    """
    p = params
    return StrictFeedbackSystem(
        f_true=[
            lambda h: 0.0,
            lambda h: (-p.damping * h[1] - p.gravity * math.sin(h[0])) / p.inertia,
            lambda h: -p.load - p.motor_damping * h[2] - p.coupling * h[1],
        ],
        g=[
            lambda h: 1.0,
            lambda h: 1.0 / p.inertia,
            lambda h: 1.0,
        ],
    )


@dataclass(frozen=True)
class SinusoidExcitation:
    amplitude: float = 1.0
    frequency: float = 0.5

    def __call__(self, t: float, x: np.ndarray) -> float:
        return self.amplitude * math.sin(2.0 * math.pi * self.frequency * t)


def collect_training_data(
    system: StrictFeedbackSystem,
    excitation: SinusoidExcitation,
    n_points: int,
    noise_std: float,
    seed,
    duration: float = 10.0,
    dt: float = 1e-2,
) -> list[Dataset]:
    """Open-loop excitation run subsampled into per-subsystem datasets.

    Subsystem i records inputs (x_1..x_i) and noisy targets f_i(x) + eps at
    ``n_points`` states spaced uniformly in time along the run.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    rng = as_generator(seed)
    traj = simulate(system, excitation, np.zeros(system.m), duration, dt)
    idx = np.unique(np.round(np.linspace(0, traj.states.shape[0] - 1, n_points)).astype(int))
    picked = traj.states[idx]
    datasets = []
    for i in range(system.m):
        targets = np.array([system.f_true[i](row[: i + 1]) for row in picked])
        targets = targets + noise_std * rng.standard_normal(targets.size)
        datasets.append(Dataset(X=picked[:, : i + 1], y=targets))
    return datasets
