"""Formation potential, energies, and the strict-Lyapunov (Chetaev) machinery.

The potential of a configuration p is

    V(p) = 1/4 * sum over edges ij of (|p_j - p_i|^2 - d_ij^2)^2,

its per-agent share V_i keeps only the edges incident to agent i (so each
edge is counted by both endpoints and sum_i V_i = 2 V).  Total energy is
E = T + V with kinetic T = |v|^2 / 2.  The damped second-order gradient
flow makes E non-increasing but not strictly; adding a small cross term,

    E_eps(x) = E(x) + eps * <grad V(p), v>,

yields a strict Lyapunov function on a sublevel set of V once eps is small
enough.  This module computes all those quantities analytically and
estimates the constants that make the argument quantitative:

* alpha_0, alpha_1 with alpha_0 V <= |grad V|^2 <= alpha_1 V on {V <= L}
  (the lower bound needs infinitesimal rigidity of the target shapes),
* alpha_2 bounding the Hessian operator norm on {V <= L},
* the admissible eps plus the equivalence/decay rates gamma_0, gamma_1,
  gamma_2 obtained from 2x2 matrix positivity conditions.

The alphas are Monte-Carlo estimates over the sublevel set with safety
factors, not certified bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .rigidity import DimensionMismatchError, FormationSpec, as_point_matrix


@dataclass(frozen=True)
class SystemState:
    """Positions and velocities of all agents at one instant.

    ``p`` and ``v`` are stacked (n*N,) vectors (agent i occupies the
    coordinate block i*n..(i+1)*n-1).
    """

    t: float
    p: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float).ravel()
        v = np.array(self.v, dtype=float).ravel()
        if p.shape != v.shape:
            raise DimensionMismatchError(
                f"position and velocity dimensions differ: {p.shape} vs {v.shape}"
            )
        p.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "v", v)

    def stacked(self) -> np.ndarray:
        """State as a single (2nN,) vector [p, v]."""
        return np.concatenate([self.p, self.v])

    @classmethod
    def from_stacked(cls, t: float, y: np.ndarray) -> "SystemState":
        y = np.asarray(y, dtype=float)
        half = y.size // 2
        return cls(t=t, p=y[:half], v=y[half:])


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    potential: float
    total: float

    def __post_init__(self):
        if self.total != self.kinetic + self.potential:
            raise ValueError("total must equal kinetic + potential exactly")


@dataclass(frozen=True)
class SublevelConstants:
    """Estimated gradient-domination and Hessian constants on {V <= L}."""

    bound: float
    alpha0: float
    alpha1: float
    alpha2: float
    sample_count: int

    def __post_init__(self):
        if not (0.0 < self.alpha0 <= self.alpha1):
            raise ValueError("need 0 < alpha0 <= alpha1")
        if self.alpha2 <= 0.0:
            raise ValueError("alpha2 must be positive")


@dataclass(frozen=True)
class ChetaevParams:
    """Mixing weight eps plus equivalence and decay constants.

    gamma0 * E <= E_eps <= gamma1 * E and dE_eps/dt <= -gamma2 * E_eps on
    the sublevel set the constants were estimated for.
    """

    epsilon: float
    gamma0: float
    gamma1: float
    gamma2: float
    r_min: float
    r_max: float
    matrix_margin: float = 0.0


def potential(spec: FormationSpec, p) -> float:
    """Quarter sum of squared edge-length-squared errors."""
    pts = as_point_matrix(p, spec.vertex_count, spec.ambient_dim)
    g = spec.graph
    diff = pts[g.edge_heads] - pts[g.edge_tails]
    err = np.einsum("md,md->m", diff, diff) - spec.squared_distance_vector
    return 0.25 * float(err @ err)


def local_potentials(spec: FormationSpec, p) -> np.ndarray:
    """Per-agent potential shares V_i for all agents at once, shape (N,)."""
    pts = as_point_matrix(p, spec.vertex_count, spec.ambient_dim)
    g = spec.graph
    diff = pts[g.edge_heads] - pts[g.edge_tails]
    err = np.einsum("md,md->m", diff, diff) - spec.squared_distance_vector
    return g.adjacency_transpose @ (0.25 * err * err)


def local_potential(spec: FormationSpec, i: int, p) -> float:
    """Potential share of agent i: quarter sum over its incident edges.

    Computable from the distances |p_j - p_i| alone.
    """
    if not (0 <= i < spec.vertex_count):
        raise ValueError(f"agent index {i} outside 0..{spec.vertex_count - 1}")
    return float(local_potentials(spec, p)[i])


def potential_gradient(spec: FormationSpec, p) -> np.ndarray:
    """Stacked gradient of the potential; block i sums (|u|^2 - d^2) * u over incident edges."""
    pts = as_point_matrix(p, spec.vertex_count, spec.ambient_dim)
    g = spec.graph
    diff = pts[g.edge_tails] - pts[g.edge_heads]
    err = np.einsum("md,md->m", diff, diff) - spec.squared_distance_vector
    return (g.incidence_transpose @ (err[:, None] * diff)).ravel()


def local_potential_gradients(spec: FormationSpec, p) -> np.ndarray:
    """Full gradients of every V_i, returned as an (N, nN) matrix.

    Row i is the gradient of agent i's potential share with respect to the
    whole configuration: block i agrees with the corresponding block of the
    total gradient, block j (for a neighbor j) is (|u|^2 - d^2) * (p_j - p_i),
    and all other blocks vanish.
    """
    pts = as_point_matrix(p, spec.vertex_count, spec.ambient_dim)
    n, big_n = spec.ambient_dim, spec.vertex_count
    g = spec.graph
    ei, ej = g.edge_tails, g.edge_heads
    diff = pts[ei] - pts[ej]
    err = np.einsum("md,md->m", diff, diff) - spec.squared_distance_vector
    w = err[:, None] * diff
    out = np.zeros((big_n, big_n, n))
    # off-diagonal blocks carry a single edge each; the diagonal block of
    # row i equals block i of the total gradient
    out[ei, ej] = -w
    out[ej, ei] = w
    idx = np.arange(big_n)
    out[idx, idx] = g.incidence_transpose @ w
    return out.reshape(big_n, big_n * n)


def potential_hessian_apply(spec: FormationSpec, p, w) -> np.ndarray:
    """Hessian-vector product grad^2 V(p) @ w, assembled edge by edge.

    Each edge {i, j} with u = p_i - p_j and error e = |u|^2 - d^2
    contributes 2 <u, w_i - w_j> u + e (w_i - w_j) to block i and its
    negative to block j.
    """
    pts = as_point_matrix(p, spec.vertex_count, spec.ambient_dim)
    wts = as_point_matrix(w, spec.vertex_count, spec.ambient_dim)
    g = spec.graph
    diff = pts[g.edge_tails] - pts[g.edge_heads]
    wdiff = wts[g.edge_tails] - wts[g.edge_heads]
    err = np.einsum("md,md->m", diff, diff) - spec.squared_distance_vector
    inner = np.einsum("md,md->m", diff, wdiff)
    contrib = 2.0 * inner[:, None] * diff + err[:, None] * wdiff
    return (g.incidence_transpose @ contrib).ravel()


def kinetic_energy(v) -> float:
    v = np.asarray(v, dtype=float).ravel()
    return 0.5 * float(v @ v)


def total_energy(spec: FormationSpec, state: SystemState) -> EnergyBreakdown:
    t = kinetic_energy(state.v)
    v = potential(spec, state.p)
    return EnergyBreakdown(kinetic=t, potential=v, total=t + v)


def chetaev_value(spec: FormationSpec, state: SystemState, epsilon: float) -> float:
    """E(x) + eps * <grad V(p), v>."""
    if epsilon < 0.0:
        raise ValueError("epsilon must be nonnegative")
    e = total_energy(spec, state).total
    if epsilon == 0.0:
        return e
    return e + epsilon * float(potential_gradient(spec, state.p) @ state.v)


def expand_damping(damping, vertex_count: int, ambient_dim: int) -> np.ndarray:
    """Per-agent damping gains -> diagonal of the (nN, nN) damping matrix."""
    r = np.asarray(damping, dtype=float).ravel()
    if r.shape != (vertex_count,):
        raise DimensionMismatchError(f"expected {vertex_count} damping gains, got {r.shape}")
    if np.any(r <= 0.0):
        raise ValueError("damping gains must be positive")
    return np.repeat(r, ambient_dim)


def chetaev_derivative(spec: FormationSpec, state: SystemState, epsilon: float, damping) -> float:
    """Derivative of E_eps along the damped gradient flow, evaluated pointwise.

    Equals -<Rv, v> + eps <H v, v> - eps |grad V|^2 - eps <Rv, grad V>
    with H the potential Hessian at p and R the diagonal damping matrix
    built from the per-agent gains.
    """
    if epsilon < 0.0:
        raise ValueError("epsilon must be nonnegative")
    r_diag = expand_damping(damping, spec.vertex_count, spec.ambient_dim)
    v = state.v
    rv = r_diag * v
    out = -float(rv @ v)
    if epsilon == 0.0:
        return out
    grad = potential_gradient(spec, state.p)
    hv = potential_hessian_apply(spec, state.p, v)
    out += epsilon * float(hv @ v)
    out -= epsilon * float(grad @ grad)
    out -= epsilon * float(rv @ grad)
    return out


class DegenerateSamplingError(RuntimeError):
    """Sublevel sampling failed to produce configurations with V > 0."""


def find_target_configuration(
    spec: FormationSpec,
    initial_guess,
    tol: float = 1e-12,
) -> np.ndarray:
    """Minimize the potential from a starting guess to locate a target shape.

    Returns a stacked configuration with V below ``tol``; raises
    DegenerateSamplingError when the minimizer stalls at a positive value
    (the distances are then likely unrealizable from that guess).
    """
    p0 = as_point_matrix(initial_guess, spec.vertex_count, spec.ambient_dim).ravel()
    res = scipy.optimize.minimize(
        lambda q: potential(spec, q),
        p0,
        jac=lambda q: potential_gradient(spec, q),
        method="BFGS",
        options={"gtol": 1e-12, "maxiter": 2000},
    )
    if res.fun > tol:
        raise DegenerateSamplingError(
            f"could not reach the target shape: residual potential {res.fun:.3e}"
        )
    return np.asarray(res.x, dtype=float)


def sample_sublevel_configurations(
    spec: FormationSpec,
    anchor,
    bound: float,
    count: int,
    rng: np.random.Generator,
    level_floor: float = 0.02,
) -> np.ndarray:
    """Draw configurations with potential in (0, bound], shape (count, nN).

    Each sample perturbs the anchor target configuration along a random
    Gaussian direction and bisects the perturbation scale until the
    potential lands on a target level drawn uniformly from
    [level_floor * bound, bound].
    """
    anchor_flat = as_point_matrix(anchor, spec.vertex_count, spec.ambient_dim).ravel()
    v_anchor = potential(spec, anchor_flat)
    if v_anchor > 1e-9 * max(bound, 1.0):
        raise DegenerateSamplingError(
            f"anchor is not a target formation (V = {v_anchor:.3e})"
        )
    if bound <= 0.0:
        raise ValueError("sublevel bound must be positive")
    dim = anchor_flat.size
    out = np.empty((count, dim))
    for s in range(count):
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        target = bound * rng.uniform(level_floor, 1.0)
        lo, hi = 0.0, 1e-3
        for _ in range(200):
            if potential(spec, anchor_flat + hi * direction) >= target:
                break
            lo, hi = hi, 2.0 * hi
        else:
            raise DegenerateSamplingError("perturbation never reached the target level")
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if potential(spec, anchor_flat + mid * direction) < target:
                lo = mid
            else:
                hi = mid
        out[s] = anchor_flat + hi * direction
    return out


def hessian_operator_norm(
    spec: FormationSpec, p, rng: np.random.Generator, iterations: int = 50
) -> float:
    """Power-iteration estimate of the potential Hessian's operator norm at p."""
    dim = spec.dof
    w = rng.standard_normal(dim)
    w /= np.linalg.norm(w)
    norm = 0.0
    for _ in range(iterations):
        hw = potential_hessian_apply(spec, p, w)
        norm = float(np.linalg.norm(hw))
        if norm == 0.0:
            return 0.0
        w = hw / norm
    return norm


def estimate_sublevel_constants(
    spec: FormationSpec,
    bound: float,
    anchor,
    sample_count: int = 512,
    seed: int = 0,
    power_iterations: int = 50,
) -> SublevelConstants:
    """Monte-Carlo estimate of alpha_0, alpha_1, alpha_2 on {V <= bound}.

    alpha_1 is the largest sampled ratio |grad V|^2 / V inflated by 1.1,
    alpha_0 the smallest deflated by 0.9, and alpha_2 the largest sampled
    Hessian operator norm inflated by 1.1.  Estimates, not certificates.
    """
    rng = np.random.default_rng(seed)
    samples = sample_sublevel_configurations(spec, anchor, bound, sample_count, rng)
    ratios = np.empty(sample_count)
    hess_norms = np.empty(sample_count)
    for s in range(sample_count):
        p = samples[s]
        v = potential(spec, p)
        if v <= 0.0:
            raise DegenerateSamplingError("sampled configuration has V = 0")
        g = potential_gradient(spec, p)
        ratios[s] = float(g @ g) / v
        hess_norms[s] = hessian_operator_norm(spec, p, rng, power_iterations)
    alpha0 = 0.9 * float(np.min(ratios))
    alpha1 = 1.1 * float(np.max(ratios))
    alpha2 = 1.1 * float(np.max(hess_norms))
    if alpha0 <= 0.0:
        raise DegenerateSamplingError("estimated alpha0 is not positive")
    return SublevelConstants(
        bound=bound,
        alpha0=alpha0,
        alpha1=alpha1,
        alpha2=alpha2,
        sample_count=sample_count,
    )


def chetaev_matrices(
    epsilon: float, constants: SublevelConstants, r_min: float, r_max: float
):
    """The three 2x2 forms whose positive definiteness certifies strict decay.

    In the scalar pair w = (|grad V|, |v|): O bounds E_eps from below,
    P bounds it from above, and Q bounds -dE_eps/dt from below.
    """
    o = np.array([[1.0 / constants.alpha1, -epsilon / 2.0], [-epsilon / 2.0, 0.5]])
    p = np.array([[1.0 / constants.alpha0, epsilon / 2.0], [epsilon / 2.0, 0.5]])
    q = np.array(
        [
            [epsilon, -epsilon * r_max / 2.0],
            [-epsilon * r_max / 2.0, r_min - epsilon * constants.alpha2],
        ]
    )
    return o, p, q


class NoFeasibleEpsilonError(RuntimeError):
    """No eps > 0 makes all three Chetaev matrices positive definite."""


def find_chetaev_epsilon(
    constants: SublevelConstants, r_min: float, r_max: float
) -> ChetaevParams:
    """Pick eps maximizing the worst minimum eigenvalue of the three forms.

    The search bracket comes from the closed-form positivity condition of
    the decay form: eps < r_min / (alpha2 + r_max^2 / 4).  gamma_0 and
    gamma_1 are generalized-eigenvalue equivalence constants against the
    eps = 0 forms, gamma_2 the minimum eigenvalue of the decay form
    relative to the upper form.
    """
    if min(r_min, r_max) <= 0.0:
        raise ValueError("damping extremes must be positive")
    if r_min > r_max:
        raise ValueError("r_min must not exceed r_max")
    eps_max = r_min / (constants.alpha2 + r_max * r_max / 4.0)

    def margin(eps: float) -> float:
        o, p, q = chetaev_matrices(eps, constants, r_min, r_max)
        return min(
            np.linalg.eigvalsh(o)[0],
            np.linalg.eigvalsh(p)[0],
            np.linalg.eigvalsh(q)[0],
        )

    gold = (math.sqrt(5.0) - 1.0) / 2.0
    lo, hi = 0.0, eps_max
    a = hi - gold * (hi - lo)
    b = lo + gold * (hi - lo)
    fa, fb = margin(a), margin(b)
    for _ in range(200):
        if fa < fb:
            lo, a, fa = a, b, fb
            b = lo + gold * (hi - lo)
            fb = margin(b)
        else:
            hi, b, fb = b, a, fa
            a = hi - gold * (hi - lo)
            fa = margin(a)
    eps = 0.5 * (a + b)
    best = margin(eps)
    if not (eps > 0.0 and best > 0.0):
        raise NoFeasibleEpsilonError(
            f"no positive eps found (bracket 0..{eps_max:.3e}, best margin {best:.3e})"
        )
    o_eps, p_eps, q_eps = chetaev_matrices(eps, constants, r_min, r_max)
    o_0, p_0, _ = chetaev_matrices(0.0, constants, r_min, r_max)
    gamma0 = float(scipy.linalg.eigh(o_eps, p_0, eigvals_only=True)[0])
    gamma1 = float(scipy.linalg.eigh(p_eps, o_0, eigvals_only=True)[-1])
    gamma2 = float(scipy.linalg.eigh(q_eps, p_eps, eigvals_only=True)[0])
    return ChetaevParams(
        epsilon=eps,
        gamma0=gamma0,
        gamma1=gamma1,
        gamma2=gamma2,
        r_min=r_min,
        r_max=r_max,
        matrix_margin=best,
    )
