"""Closed-loop dynamics, fixed-step RK4 integration, and energy analysis.

Both control laws close the double-integrator loop

    dp/dt = v,    dv/dt = -R v + (control force),

where R is the diagonal damping matrix.  The relative-position law gives
the damped second-order gradient flow dv/dt = -R v - grad V(p); the
distance-only law gives a time-dependent loop whose high-frequency limit
is that same flow.  Integration is classical 4th-order Runge-Kutta with a
fixed step so high-frequency dither runs stay deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import controllers as ctl
from .controllers import BodyFrames, DistanceOnlyConfig, GradientControllerConfig
from .energy import SystemState, expand_damping, potential_gradient
from .rigidity import FormationSpec


class DivergenceError(RuntimeError):
    """Integration produced a non-finite state; carries the last finite one."""

    def __init__(self, message: str, last_state: SystemState):
        super().__init__(message)
        self.last_state = last_state


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step integration parameters.

    ``samples_per_period`` is consumed by the scenario layer: for
    time-dependent loops the effective step is shrunk so the fastest dither
    period keeps at least that many steps.
    """

    step: float
    horizon: float
    record_every: int = 1
    samples_per_period: int = 20

    def __post_init__(self):
        if self.step <= 0.0:
            raise ValueError("step must be positive")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be a positive integer")
        if self.samples_per_period < 1:
            raise ValueError("samples_per_period must be a positive integer")


@dataclass(frozen=True)
class Trajectory:
    """Uniformly recorded samples of a single integration run."""

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise ValueError("times must be a nonempty 1-D array")
        if t.size > 1:
            dt = np.diff(t)
            if np.any(dt <= 0.0):
                raise ValueError("timestamps must be strictly increasing")
            if np.max(np.abs(dt - dt[0])) > 1e-12:
                raise ValueError("recording interval must be uniform within 1e-12")
        for name in ("positions", "velocities"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape[0] != t.size:
                raise ValueError(f"{name} must have one row per timestamp")

    def __len__(self) -> int:
        return self.times.size

    def state(self, k: int) -> SystemState:
        return SystemState(t=float(self.times[k]), p=self.positions[k], v=self.velocities[k])

    @property
    def final_state(self) -> SystemState:
        return self.state(len(self) - 1)


@dataclass(frozen=True)
class DecayFit:
    """Log-linear fit of an energy trace: E(t) ~ amplitude * E(t0) * exp(-rate * t)."""

    amplitude: float
    rate: float
    r_squared: float
    window: tuple[float, float]


def make_gradient_rhs(spec: FormationSpec, frames: BodyFrames, cfg: GradientControllerConfig):
    """Pure RHS closure of the damped gradient flow, f(t, y) with y = [p, v]."""
    r_diag = expand_damping(cfg.damping, spec.vertex_count, spec.ambient_dim)
    dof = spec.dof

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        p = y[:dof]
        v = y[dof:]
        out = np.empty(2 * dof)
        out[:dof] = v
        out[dof:] = -r_diag * v - potential_gradient(spec, p)
        return out

    return rhs


def rhs_gradient(
    spec: FormationSpec, frames: BodyFrames, cfg: GradientControllerConfig, state: SystemState
) -> np.ndarray:
    """Stacked derivative [dp/dt, dv/dt] of the damped gradient flow at a state."""
    return make_gradient_rhs(spec, frames, cfg)(state.t, state.stacked())


def make_distance_only_rhs(
    spec: FormationSpec,
    frames: BodyFrames,
    cfg: DistanceOnlyConfig,
    measurement_noise: float | None = None,
    rng: np.random.Generator | None = None,
):
    """Pure RHS closure of the dithered distance-only loop.

    The acceleration is assembled through the distance-only controller, so
    only measured distances and body-frame velocity components ever reach
    the control computation.  Optional additive Gaussian noise perturbs the
    distance measurements (and nothing else).
    """
    dof = spec.dof
    n = spec.ambient_dim
    big_n = spec.vertex_count
    if measurement_noise is not None and rng is None:
        raise ValueError("measurement noise needs an explicit random generator")

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        p = y[:dof].reshape(big_n, n)
        v = y[dof:].reshape(big_n, n)
        meas = ctl.measure_distances(spec, p)
        if measurement_noise is not None:
            meas = ctl.add_distance_noise(meas, measurement_noise, rng)
        coeff = ctl.distance_only_control(
            spec, frames, cfg, frames.to_components(v), meas, t
        )
        out = np.empty(2 * dof)
        out[:dof] = v.ravel()
        out[dof:] = frames.from_components(coeff).ravel()
        return out

    return rhs


def rhs_distance_only(
    spec: FormationSpec,
    frames: BodyFrames,
    cfg: DistanceOnlyConfig,
    state: SystemState,
    t: float,
) -> np.ndarray:
    """Stacked derivative of the distance-only loop at (state, t)."""
    return make_distance_only_rhs(spec, frames, cfg)(t, state.stacked())


def make_averaged_rhs(spec: FormationSpec, frames: BodyFrames, cfg: DistanceOnlyConfig):
    """RHS closure of the averaged loop: damping plus the symmetric-product sum.

    Coincides with the damped gradient flow; kept as a distinct assembly so
    the identity can be checked numerically.
    """
    r_diag = expand_damping(cfg.damping, spec.vertex_count, spec.ambient_dim)
    dof = spec.dof

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        p = y[:dof]
        v = y[dof:]
        out = np.empty(2 * dof)
        out[:dof] = v
        out[dof:] = -r_diag * v - ctl.symmetric_product_sum(spec, cfg, p, frames)
        return out

    return rhs


def rhs_averaged(
    spec: FormationSpec, frames: BodyFrames, cfg: DistanceOnlyConfig, state: SystemState
) -> np.ndarray:
    """Stacked derivative of the averaged loop at a state."""
    return make_averaged_rhs(spec, frames, cfg)(state.t, state.stacked())


def integrate(rhs, initial: SystemState, cfg: IntegratorConfig, metadata: dict | None = None) -> Trajectory:
    """Classical fixed-step RK4 from ``initial.t`` over ``cfg.horizon``.

    Records every ``record_every``-th step (including the initial state);
    the step count is rounded up so the final recorded time is the smallest
    multiple of record_every * step at or beyond the horizon.  Raises
    DivergenceError as soon as the state stops being finite.
    """
    h = cfg.step
    t0 = initial.t
    n_steps = int(np.ceil(cfg.horizon / h - 1e-12))
    rec = cfg.record_every
    n_steps = ((n_steps + rec - 1) // rec) * rec
    y = initial.stacked()
    n_records = n_steps // rec + 1
    times = np.empty(n_records)
    states = np.empty((n_records, y.size))
    times[0] = t0
    states[0] = y
    sixth = h / 6.0
    for k in range(n_steps):
        t = t0 + k * h
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + (0.5 * h) * k1)
        k3 = rhs(t + 0.5 * h, y + (0.5 * h) * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + sixth * (k1 + 2.0 * (k2 + k3) + k4)
        if not np.all(np.isfinite(y)):
            prev_record = k // rec
            last = SystemState.from_stacked(float(times[prev_record]), states[prev_record])
            raise DivergenceError(
                f"state became non-finite at t = {t0 + (k + 1) * h:.6g}", last_state=last
            )
        if (k + 1) % rec == 0:
            m = (k + 1) // rec
            times[m] = t0 + (k + 1) * h
            states[m] = y
    dof = y.size // 2
    return Trajectory(
        times=times,
        positions=states[:, :dof],
        velocities=states[:, dof:],
        metadata=dict(metadata or {}),
    )


@dataclass(frozen=True)
class EnergyTrace:
    """Kinetic/potential/total energy per recorded sample."""

    times: np.ndarray
    kinetic: np.ndarray
    potential: np.ndarray
    total: np.ndarray

    def window(self, t_lo: float, t_hi: float) -> "EnergyTrace":
        mask = (self.times >= t_lo - 1e-12) & (self.times <= t_hi + 1e-12)
        return EnergyTrace(
            times=self.times[mask],
            kinetic=self.kinetic[mask],
            potential=self.potential[mask],
            total=self.total[mask],
        )


def energy_trace(spec: FormationSpec, traj: Trajectory) -> EnergyTrace:
    """Evaluate the energy breakdown along a trajectory (vectorized over samples)."""
    g = spec.graph
    pts = traj.positions.reshape(len(traj), spec.vertex_count, spec.ambient_dim)
    diff = pts[:, g.edge_heads] - pts[:, g.edge_tails]
    err = np.einsum("kmd,kmd->km", diff, diff) - spec.squared_distance_vector
    pot = 0.25 * np.einsum("km,km->k", err, err)
    kin = 0.5 * np.einsum("kd,kd->k", traj.velocities, traj.velocities)
    return EnergyTrace(times=traj.times.copy(), kinetic=kin, potential=pot, total=kin + pot)


def fit_exponential(trace: EnergyTrace, window: tuple[float, float]) -> DecayFit:
    """Least-squares line through (t, log E) on the window.

    The decay rate is the negated slope; the amplitude is the fitted energy
    at the trace start divided by the actual energy there, so the fit reads
    E(t) <= amplitude * E(t_start) * exp(-rate * (t - t_start)).
    """
    t_lo, t_hi = window
    sub = trace.window(t_lo, t_hi)
    if sub.times.size < 2:
        raise ValueError(f"window [{t_lo}, {t_hi}] selects fewer than two samples")
    if np.any(sub.total <= 0.0):
        raise ValueError(
            "nonpositive energy inside the fit window; shrink the window to where E > 0"
        )
    e_start = float(trace.total[0])
    if e_start <= 0.0:
        raise ValueError("trace starts at zero energy; nothing to normalize against")
    slope, intercept = np.polyfit(sub.times, np.log(sub.total), 1)
    log_fit = intercept + slope * sub.times
    ss_res = float(np.sum((np.log(sub.total) - log_fit) ** 2))
    ss_tot = float(np.sum((np.log(sub.total) - np.mean(np.log(sub.total))) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    t_start = float(trace.times[0])
    amplitude = float(np.exp(intercept + slope * t_start)) / e_start
    return DecayFit(
        amplitude=amplitude,
        rate=float(-slope),
        r_squared=float(min(max(r2, 0.0), 1.0)),
        window=(float(t_lo), float(t_hi)),
    )


def estimate_convergence_order(rhs, initial: SystemState, horizon: float, base_step: float) -> float:
    """Three-grid Richardson estimate of the integrator's convergence order.

    Integrates at h, h/2, h/4 and returns log2 of the ratio of successive
    terminal-state differences (4 for a 4th-order scheme).
    """
    finals = []
    for divisor in (1, 2, 4):
        cfg = IntegratorConfig(step=base_step / divisor, horizon=horizon, record_every=divisor)
        traj = integrate(rhs, initial, cfg)
        finals.append(traj.final_state.stacked())
    err_coarse = float(np.linalg.norm(finals[0] - finals[1]))
    err_fine = float(np.linalg.norm(finals[1] - finals[2]))
    if err_fine == 0.0:
        raise ValueError("refinement differences vanished; pick a larger base step")
    return float(np.log2(err_coarse / err_fine))


def coordinate_labels(vertex_count: int, ambient_dim: int, prefix: str) -> list[str]:
    axes = "xyz"
    out = []
    for i in range(vertex_count):
        for k in range(ambient_dim):
            suffix = axes[k] if ambient_dim <= 3 else f"c{k}"
            out.append(f"{prefix}_{i + 1}_{suffix}")
    return out


def trajectory_csv_rows(spec: FormationSpec, traj: Trajectory, trace: EnergyTrace | None = None):
    """CSV rows for a trajectory: t, E, T, V, then stacked positions and velocities."""
    if trace is None:
        trace = energy_trace(spec, traj)
    header = (
        ["t", "E", "T", "V"]
        + coordinate_labels(spec.vertex_count, spec.ambient_dim, "p")
        + coordinate_labels(spec.vertex_count, spec.ambient_dim, "v")
    )
    yield header
    for k in range(len(traj)):
        row = [traj.times[k], trace.total[k], trace.kinetic[k], trace.potential[k]]
        row.extend(traj.positions[k])
        row.extend(traj.velocities[k])
        yield [repr(float(x)) for x in row]


def energy_csv_rows(trace: EnergyTrace):
    """CSV rows for an energy trace: t, E, T, V."""
    yield ["t", "E", "T", "V"]
    for k in range(trace.times.size):
        yield [
            repr(float(trace.times[k])),
            repr(float(trace.total[k])),
            repr(float(trace.kinetic[k])),
            repr(float(trace.potential[k])),
        ]
