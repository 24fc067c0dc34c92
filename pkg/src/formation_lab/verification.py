"""Composite numerical checks behind the ``verify`` command.

Each check returns a plain dict with a ``passed`` flag and the measured
quantities, so the CLI can assemble them into a machine-readable report.
All randomness is seeded from the scenario, keeping reports reproducible.
"""

from __future__ import annotations

import numpy as np

from . import averaging as avg
from . import controllers as ctl
from . import dynamics as dyn
from . import energy as en
from .dynamics import IntegratorConfig, integrate
from .rigidity import is_infinitesimally_rigid
from .scenario import Scenario


def _reference_configuration(scenario: Scenario) -> tuple[np.ndarray, str]:
    if scenario.target_configuration is not None:
        return scenario.target_configuration, "target"
    return scenario.initial.p, "initial"


def resolve_target(scenario: Scenario) -> np.ndarray:
    """Target configuration: the declared one, or one found by minimizing V."""
    if scenario.target_configuration is not None:
        return scenario.target_configuration
    rng = np.random.default_rng(scenario.seed)
    guess = scenario.initial.p + 0.1 * rng.standard_normal(scenario.spec.dof)
    return en.find_target_configuration(scenario.spec, guess)


def _default_distance_config(scenario: Scenario) -> ctl.DistanceOnlyConfig:
    if scenario.distance_config is not None:
        return scenario.distance_config
    n, big_n = scenario.spec.ambient_dim, scenario.spec.vertex_count
    freq = np.array(
        [[n * i + k + 1.0 for k in range(n)] for i in range(big_n)], dtype=float
    )
    return ctl.DistanceOnlyConfig(
        damping=scenario.damping,
        offsets=np.ones(big_n),
        omega=10.0,
        frequency_coefficients=freq,
        phases=np.full((big_n, n), -np.pi / 2.0),
    )


def check_rigidity(scenario: Scenario) -> dict:
    """Rank test at the scenario's reference configuration."""
    p, which = _reference_configuration(scenario)
    verdict = is_infinitesimally_rigid(scenario.spec.graph, p, scenario.spec.ambient_dim)
    return {
        "passed": verdict.rigid,
        "configuration": which,
        "rank": verdict.rank,
        "required_rank": verdict.required_rank,
    }


def check_gradient_finite_difference(
    scenario: Scenario, count: int = 20, h: float = 1e-5, tol: float = 1e-6
) -> dict:
    """Analytic potential gradient against central differences at random configurations."""
    spec = scenario.spec
    rng = np.random.default_rng(scenario.seed + 1)
    scale = float(np.max(spec.distance_vector))
    worst = 0.0
    basis = np.eye(spec.dof)
    for _ in range(count):
        p = scale * rng.standard_normal(spec.dof)
        grad = en.potential_gradient(spec, p)
        fd = np.array(
            [
                (en.potential(spec, p + h * e) - en.potential(spec, p - h * e)) / (2.0 * h)
                for e in basis
            ]
        )
        denom = np.linalg.norm(grad)
        if denom == 0.0:
            continue
        worst = max(worst, float(np.linalg.norm(grad - fd) / denom))
    return {"passed": worst <= tol, "max_relative_error": worst, "tolerance": tol, "count": count}


def check_symmetric_product_identity(
    scenario: Scenario,
    count: int = 100,
    tol: float = 1e-10,
    settings: tuple[tuple[float, float], ...] = ((10.0, 1.0), (1000.0, 0.01)),
) -> dict:
    """Symmetric-product sum against the potential gradient on sublevel points.

    Evaluated at two (omega, offset) settings; the identity is parameter
    independent, so both must agree with the gradient.
    """
    spec, frames = scenario.spec, scenario.frames
    anchor = resolve_target(scenario)
    rng = np.random.default_rng(scenario.seed + 2)
    points = en.sample_sublevel_configurations(
        spec, anchor, scenario.sublevel_bound, count, rng
    )
    base = _default_distance_config(scenario)
    worst = 0.0
    for omega, offset in settings:
        cfg = ctl.DistanceOnlyConfig(
            damping=base.damping,
            offsets=np.full(spec.vertex_count, offset),
            omega=omega,
            frequency_coefficients=base.frequency_coefficients,
            phases=base.phases,
        )
        for p in points:
            grad = en.potential_gradient(spec, p)
            sym = ctl.symmetric_product_sum(spec, cfg, p, frames)
            denom = np.linalg.norm(grad)
            if denom == 0.0:
                continue
            worst = max(worst, float(np.linalg.norm(sym - grad) / denom))
    return {
        "passed": worst <= tol,
        "max_relative_error": worst,
        "tolerance": tol,
        "count": count,
        "settings": [list(s) for s in settings],
    }


def check_transform_consistency(
    scenario: Scenario,
    window: float = 2.0,
    steps_per_period: int = 80,
    record_every: int = 8,
    tol: float = 1e-6,
) -> dict:
    """Dual-integration agreement of the dithered loop and its transformed form.

    Integrates both systems with the same refined step, maps the
    transformed trajectory back through the inverse velocity change, and
    compares states in RMS.
    """
    spec, frames = scenario.spec, scenario.frames
    cfg = _default_distance_config(scenario)
    initial = scenario.initial
    h = cfg.fastest_period / steps_per_period
    icfg = IntegratorConfig(step=h, horizon=window, record_every=record_every)
    direct = integrate(dyn.make_distance_only_rhs(spec, frames, cfg), initial, icfg)
    transformed0 = avg.l_transform(spec, frames, cfg, initial, initial.t)
    transformed = integrate(avg.make_transformed_rhs(spec, frames, cfg), transformed0, icfg)
    sq_sum = 0.0
    n_vals = 0
    for k in range(len(direct)):
        mapped = avg.l_transform_inverse(
            spec, frames, cfg, transformed.state(k), float(transformed.times[k])
        )
        delta = np.concatenate(
            [direct.positions[k] - mapped.p, direct.velocities[k] - mapped.v]
        )
        sq_sum += float(delta @ delta)
        n_vals += delta.size
    rms = float(np.sqrt(sq_sum / n_vals))
    return {
        "passed": rms <= tol,
        "rms": rms,
        "tolerance": tol,
        "omega": cfg.omega,
        "step": h,
        "window": window,
    }


def gradient_trajectory(scenario: Scenario) -> dyn.Trajectory:
    """The scenario integrated under the relative-position law (whatever its own kind)."""
    cfg = ctl.GradientControllerConfig(damping=scenario.damping)
    rhs = dyn.make_gradient_rhs(scenario.spec, scenario.frames, cfg)
    return integrate(rhs, scenario.initial, scenario.integrator)


def check_monotone_energy(
    scenario: Scenario, traj: dyn.Trajectory | None = None, slack: float = 1e-9
) -> dict:
    """Recorded total energy of the gradient run never increases beyond relative slack."""
    if traj is None:
        traj = gradient_trajectory(scenario)
    trace = dyn.energy_trace(scenario.spec, traj)
    prev = trace.total[:-1]
    nxt = trace.total[1:]
    ok = nxt <= prev * (1.0 + slack)
    worst = float(np.max(nxt / np.maximum(prev, 1e-300)) - 1.0)
    return {
        "passed": bool(np.all(ok)),
        "max_relative_increase": worst,
        "slack": slack,
        "samples": int(trace.total.size),
    }


def check_chetaev_decay(
    scenario: Scenario,
    traj: dyn.Trajectory | None = None,
    required_fraction: float = 0.99,
    slack: float = 1e-9,
) -> dict:
    """Strict decay of the Chetaev function along the gradient trajectory.

    Estimates the sublevel constants, picks the mixing weight, then demands
    dE_eps/dt <= -gamma2 E_eps + slack at the required fraction of recorded
    states inside the sublevel set; shortfall states are counted, matching
    the possibly-shrink-the-sublevel-set caveat of the underlying argument.
    """
    spec = scenario.spec
    anchor = resolve_target(scenario)
    constants = en.estimate_sublevel_constants(
        spec,
        scenario.sublevel_bound,
        anchor,
        sample_count=scenario.sample_count,
        seed=scenario.seed + 3,
    )
    damping = scenario.damping
    params = en.find_chetaev_epsilon(
        constants, float(np.min(damping)), float(np.max(damping))
    )
    if traj is None:
        traj = gradient_trajectory(scenario)
    trace = dyn.energy_trace(spec, traj)
    inside = np.where(trace.potential <= constants.bound)[0]
    violations = 0
    worst = -np.inf
    for k in inside:
        state = traj.state(int(k))
        e_eps = en.chetaev_value(spec, state, params.epsilon)
        de = en.chetaev_derivative(spec, state, params.epsilon, damping)
        margin = de + params.gamma2 * e_eps
        worst = max(worst, margin)
        if margin > slack:
            violations += 1
    checked = int(inside.size)
    fraction = 1.0 if checked == 0 else 1.0 - violations / checked
    return {
        "passed": checked > 0 and fraction >= required_fraction,
        "fraction_satisfied": fraction,
        "states_checked": checked,
        "shortfall_states": violations,
        "worst_margin": float(worst),
        "constants": {
            "bound": constants.bound,
            "alpha0": constants.alpha0,
            "alpha1": constants.alpha1,
            "alpha2": constants.alpha2,
        },
        "chetaev": {
            "epsilon": params.epsilon,
            "gamma0": params.gamma0,
            "gamma1": params.gamma1,
            "gamma2": params.gamma2,
        },
    }


def check_lemma_energy_bounds(scenario: Scenario, batch: int = 64) -> dict:
    """Transform energy-equivalence constants: finite and stable across batches."""
    spec, frames = scenario.spec, scenario.frames
    cfg = _default_distance_config(scenario)
    anchor = resolve_target(scenario)

    def sample_batch(seed: int):
        rng = np.random.default_rng(seed)
        points = en.sample_sublevel_configurations(
            spec, anchor, scenario.sublevel_bound, batch, rng
        )
        states = [
            en.SystemState(t=0.0, p=p, v=rng.standard_normal(spec.dof)) for p in points
        ]
        times = rng.uniform(0.0, cfg.fastest_period * 10.0, size=batch)
        return avg.check_lemma_energy_bounds(spec, frames, cfg, states, times)

    first = sample_batch(scenario.seed + 4)
    second = sample_batch(scenario.seed + 5)
    ratios = [
        first.kappa1 / second.kappa1,
        second.kappa1 / first.kappa1,
        first.kappa2 / second.kappa2,
        second.kappa2 / first.kappa2,
    ]
    stable = all(np.isfinite(r) and r <= 2.0 for r in ratios)
    finite = all(
        np.isfinite(x) and x > 0.0
        for x in (first.kappa1, first.kappa2, second.kappa1, second.kappa2)
    )
    return {
        "passed": bool(stable and finite),
        "kappa1": first.kappa1,
        "kappa2": first.kappa2,
        "kappa1_second_batch": second.kappa1,
        "kappa2_second_batch": second.kappa2,
        "max_batch_ratio": float(np.max(ratios)),
    }


VERIFY_CHECKS = (
    ("rigidity", check_rigidity),
    ("gradient_finite_difference", check_gradient_finite_difference),
    ("symmetric_product_identity", check_symmetric_product_identity),
    ("transform_consistency", check_transform_consistency),
    ("monotone_energy", check_monotone_energy),
    ("chetaev_decay", check_chetaev_decay),
    ("lemma_energy_bounds", check_lemma_energy_bounds),
)


def run_all_checks(scenario: Scenario) -> dict[str, dict]:
    """Run the full invariant suite; shared gradient trajectory is reused."""
    traj = gradient_trajectory(scenario)
    results = {}
    for name, func in VERIFY_CHECKS:
        if func in (check_monotone_energy, check_chetaev_decay):
            results[name] = func(scenario, traj)
        else:
            results[name] = func(scenario)
    return results
