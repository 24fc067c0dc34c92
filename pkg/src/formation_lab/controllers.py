"""Body frames, sensing models, and the two formation control laws.

Each agent accelerates along its own orthonormal body frame b_{i,1..n}.
The relative-position law damps the body-frame velocity components and
descends the agent's potential share:

    a_{i,k} = -r_i <v_i, b_{i,k}> - <grad_i V_i(p), b_{i,k}>.

The distance-only law replaces the gradient term with a sinusoidal dither
whose amplitude is driven by V_i, which the agent can evaluate from its
measured distances alone:

    a_{i,k} = -r_i <v_i, b_{i,k}> + u_{i,k}(t) * sqrt(rho_i / omega + V_i),
    u_{i,k}(t) = 2 omega w_{i,k} cos(omega w_{i,k} t + phi_{i,k}).

The associated control vector fields f_l(p) = sqrt(rho_i/omega + V_i) B_l
(B_l the standard embedding of b_{i,k} at block i) have the property that
the sum of their self symmetric products 2 Df_l(p) f_l(p) reproduces the
full potential gradient, which is why the dithered loop averages to the
relative-position one.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .energy import local_potential_gradients, local_potentials, potential_gradient
from .rigidity import DimensionMismatchError, FormationSpec, as_point_matrix

FRAME_ORTHONORMALITY_TOL = 1e-12


class NonsmoothPointError(ArithmeticError):
    """Evaluation at a point where rho_i = 0 and V_i = 0 (square root kink)."""


@dataclass(frozen=True)
class BodyFrames:
    """Orthonormal body frame per agent; ``bases[i, k]`` is b_{i,k} in R^n."""

    bases: np.ndarray

    def __post_init__(self):
        arr = np.array(self.bases, dtype=float)
        if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
            raise DimensionMismatchError(
                f"frames must have shape (N, n, n), got {arr.shape}"
            )
        n = arr.shape[1]
        gram = np.einsum("ikd,ild->ikl", arr, arr)
        if np.max(np.abs(gram - np.eye(n))) > FRAME_ORTHONORMALITY_TOL:
            raise ValueError("body frames must be orthonormal within 1e-12")
        arr.setflags(write=False)
        object.__setattr__(self, "bases", arr)

    @property
    def agent_count(self) -> int:
        return self.bases.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.bases.shape[1]

    @classmethod
    def identity(cls, agent_count: int, ambient_dim: int) -> "BodyFrames":
        return cls(np.broadcast_to(np.eye(ambient_dim), (agent_count, ambient_dim, ambient_dim)).copy())

    @classmethod
    def planar_rotations(cls, angles) -> "BodyFrames":
        """Planar frames b_{i,1} = (cos a_i, sin a_i), b_{i,2} = (-sin a_i, cos a_i)."""
        a = np.asarray(angles, dtype=float).ravel()
        bases = np.empty((a.size, 2, 2))
        bases[:, 0, 0] = np.cos(a)
        bases[:, 0, 1] = np.sin(a)
        bases[:, 1, 0] = -np.sin(a)
        bases[:, 1, 1] = np.cos(a)
        return cls(bases)

    def to_components(self, vectors) -> np.ndarray:
        """Body-frame components <w_i, b_{i,k}> of per-agent vectors (N, n) -> (N, n)."""
        w = np.asarray(vectors, dtype=float)
        return np.einsum("id,ikd->ik", w, self.bases)

    def from_components(self, coefficients) -> np.ndarray:
        """Recombine coefficients (N, n) into per-agent vectors sum_k c_{ik} b_{i,k}."""
        c = np.asarray(coefficients, dtype=float)
        return np.einsum("ik,ikd->id", c, self.bases)

    def embedded_direction(self, i: int, k: int, agent_count: int | None = None) -> np.ndarray:
        """B_{i,k}: b_{i,k} placed at block i of a zero (nN,) vector."""
        n = self.ambient_dim
        out = np.zeros(self.agent_count * n)
        out[i * n : (i + 1) * n] = self.bases[i, k]
        return out


@dataclass(frozen=True)
class GradientControllerConfig:
    """Per-agent damping gains for the relative-position law."""

    damping: np.ndarray

    def __post_init__(self):
        r = np.array(self.damping, dtype=float).ravel()
        if r.size == 0 or np.any(r <= 0.0) or not np.all(np.isfinite(r)):
            raise ValueError("damping gains must be positive finite reals")
        r.setflags(write=False)
        object.__setattr__(self, "damping", r)

    @property
    def agent_count(self) -> int:
        return self.damping.size


@dataclass(frozen=True)
class DistanceOnlyConfig:
    """Damping, amplitude offsets and dither parameters for the distance-only law.

    ``frequency_coefficients[i, k]`` are the per-channel multipliers of the
    common frequency scale ``omega``; they must be positive and pairwise
    distinct across all channels.  ``offsets[i]`` >= 0 keeps the amplitude
    square root away from its kink (0 is allowed but gives only a locally
    Lipschitz loop).
    """

    damping: np.ndarray
    offsets: np.ndarray
    omega: float
    frequency_coefficients: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        r = np.array(self.damping, dtype=float).ravel()
        if r.size == 0 or np.any(r <= 0.0) or not np.all(np.isfinite(r)):
            raise ValueError("damping gains must be positive finite reals")
        rho = np.array(self.offsets, dtype=float).ravel()
        if rho.shape != r.shape or np.any(rho < 0.0) or not np.all(np.isfinite(rho)):
            raise ValueError("offsets must be nonnegative, one per agent")
        if not (self.omega > 0.0 and np.isfinite(self.omega)):
            raise ValueError("frequency scale omega must be positive")
        freq = np.array(self.frequency_coefficients, dtype=float)
        if freq.ndim != 2 or freq.shape[0] != r.size:
            raise DimensionMismatchError(
                f"frequency coefficients must have shape (N, n), got {freq.shape}"
            )
        if np.any(freq <= 0.0) or not np.all(np.isfinite(freq)):
            raise ValueError("frequency coefficients must be positive")
        flat = freq.ravel()
        if np.unique(flat).size != flat.size:
            raise ValueError("frequency coefficients must be pairwise distinct")
        phi = np.array(self.phases, dtype=float)
        if phi.shape != freq.shape:
            raise DimensionMismatchError(
                f"phases must match frequency coefficients shape {freq.shape}, got {phi.shape}"
            )
        for name, arr in (("damping", r), ("offsets", rho), ("frequency_coefficients", freq), ("phases", phi)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def agent_count(self) -> int:
        return self.damping.size

    @property
    def ambient_dim(self) -> int:
        return self.frequency_coefficients.shape[1]

    @property
    def fastest_period(self) -> float:
        """Period of the fastest dither channel, 2 pi / (omega * max coefficient)."""
        return 2.0 * np.pi / (self.omega * float(np.max(self.frequency_coefficients)))

    def with_omega(self, omega: float) -> "DistanceOnlyConfig":
        return replace(self, omega=float(omega))


@dataclass(frozen=True)
class DistanceMeasurements:
    """Measured inter-agent distances, aligned with the canonical edge order."""

    edges: tuple
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).ravel()
        if vals.size != len(self.edges):
            raise DimensionMismatchError(
                f"got {vals.size} measurements for {len(self.edges)} edges"
            )
        if np.any(vals < 0.0):
            raise ValueError("distances cannot be negative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __getitem__(self, edge) -> float:
        i, j = edge
        key = (i, j) if i < j else (j, i)
        return float(self.values[self.edges.index(key)])


def measure_distances(spec: FormationSpec, p) -> DistanceMeasurements:
    """Exact Euclidean distance per edge (noise, if any, is layered on afterwards)."""
    pts = as_point_matrix(p, spec.vertex_count, spec.ambient_dim)
    g = spec.graph
    diff = pts[g.edge_heads] - pts[g.edge_tails]
    return DistanceMeasurements(
        edges=g.edges,
        values=np.sqrt(np.einsum("md,md->m", diff, diff)),
    )


def add_distance_noise(
    measurements: DistanceMeasurements, stddev: float, rng: np.random.Generator
) -> DistanceMeasurements:
    """Additive Gaussian noise on the measured distances, clamped at zero."""
    noisy = measurements.values + stddev * rng.standard_normal(measurements.values.size)
    return DistanceMeasurements(edges=measurements.edges, values=np.maximum(noisy, 0.0))


def local_potentials_from_measurements(
    spec: FormationSpec, measurements: DistanceMeasurements
) -> np.ndarray:
    """Per-agent potential shares evaluated from distances only, shape (N,)."""
    if measurements.edges != spec.graph.edges:
        raise DimensionMismatchError("measurement edge order does not match the graph")
    vals = measurements.values
    if not np.all(np.isfinite(vals)):
        raise ValueError("distance measurements contain NaN or infinity")
    err = vals * vals - spec.squared_distance_vector
    return spec.graph.adjacency_transpose @ (0.25 * err * err)


def gradient_control(
    spec: FormationSpec,
    frames: BodyFrames,
    cfg: GradientControllerConfig,
    state,
) -> np.ndarray:
    """Coefficients a_{i,k} of the relative-position law, shape (N, n).

    Recombining with the frames gives exactly -r_i v_i - grad_i V_i(p).
    """
    p = as_point_matrix(state.p, spec.vertex_count, spec.ambient_dim)
    v = as_point_matrix(state.v, spec.vertex_count, spec.ambient_dim)
    grad_blocks = potential_gradient_blocks(spec, p)
    return -cfg.damping[:, None] * frames.to_components(v) - frames.to_components(grad_blocks)


def potential_gradient_blocks(spec: FormationSpec, p) -> np.ndarray:
    """Per-agent blocks of the potential gradient, shape (N, n)."""
    return potential_gradient(spec, p).reshape(spec.vertex_count, spec.ambient_dim)


def dither(cfg: DistanceOnlyConfig, i: int, k: int, t: float) -> float:
    """Dither signal of channel (i, k): 2 omega w cos(omega w t + phi)."""
    w = cfg.frequency_coefficients[i, k]
    return 2.0 * cfg.omega * w * np.cos(cfg.omega * w * t + cfg.phases[i, k])


def dither_matrix(cfg: DistanceOnlyConfig, t: float) -> np.ndarray:
    """All dither signals at time t, shape (N, n)."""
    w = cfg.frequency_coefficients
    return 2.0 * cfg.omega * w * np.cos(cfg.omega * w * t + cfg.phases)


def dither_amplitudes(spec: FormationSpec, cfg: DistanceOnlyConfig, local_pot) -> np.ndarray:
    """sqrt(rho_i / omega + V_i) per agent."""
    return np.sqrt(cfg.offsets / cfg.omega + np.asarray(local_pot, dtype=float))


def distance_only_control(
    spec: FormationSpec,
    frames: BodyFrames,
    cfg: DistanceOnlyConfig,
    own_velocity_components,
    measurements: DistanceMeasurements,
    t: float,
) -> np.ndarray:
    """Coefficients a_{i,k} of the distance-only law, shape (N, n).

    Sees only scalar distances and each agent's own body-frame velocity
    components; relative positions are structurally out of reach.
    """
    velc = np.asarray(own_velocity_components, dtype=float)
    n = frames.ambient_dim
    if velc.shape != (spec.vertex_count, n):
        raise DimensionMismatchError(
            f"velocity components must have shape {(spec.vertex_count, n)}, got {velc.shape}"
        )
    local_pot = local_potentials_from_measurements(spec, measurements)
    amp = dither_amplitudes(spec, cfg, local_pot)
    return -cfg.damping[:, None] * velc + dither_matrix(cfg, t) * amp[:, None]


def control_vector_field(
    spec: FormationSpec,
    cfg: DistanceOnlyConfig,
    ell: tuple[int, int],
    p,
    frames: BodyFrames,
) -> np.ndarray:
    """Control vector field of channel l = (i, k): sqrt(rho_i/omega + V_i(p)) B_l."""
    i, k = ell
    amp = np.sqrt(cfg.offsets[i] / cfg.omega + local_potentials(spec, p)[i])
    return amp * frames.embedded_direction(i, k)


def symmetric_product_sum(
    spec: FormationSpec,
    cfg: DistanceOnlyConfig,
    p,
    frames: BodyFrames,
) -> np.ndarray:
    """Sum over channels of the self symmetric products 2 Df_l(p) f_l(p).

    Assembled through the product rule: Df_l(p) w = <grad V_i, w> / (2 g_i) B_l
    with g_i = sqrt(rho_i/omega + V_i(p)).  The result reproduces the full
    potential gradient, with the rho_i/omega contributions cancelling.
    Refuses points where some g_i vanishes (rho_i = 0 and V_i = 0): the
    square root is not differentiable there.
    """
    local_pot = local_potentials(spec, p)
    g = np.sqrt(cfg.offsets / cfg.omega + local_pot)
    if np.any(g == 0.0):
        bad = int(np.argmin(g))
        raise NonsmoothPointError(
            f"agent {bad} sits at a kink (offset 0 and local potential 0)"
        )
    grads = local_potential_gradients(spec, p).reshape(
        spec.vertex_count, spec.vertex_count, spec.ambient_dim
    )
    # <grad g_i, B_{i,k}> = <grad_i V_i, b_{i,k}> / (2 g_i)
    own_blocks = grads[np.arange(spec.vertex_count), np.arange(spec.vertex_count)]
    coeff = frames.to_components(own_blocks) / (2.0 * g[:, None])
    return frames.from_components(2.0 * g[:, None] * coeff).ravel()
