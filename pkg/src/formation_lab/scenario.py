"""Scenario documents: JSON schema, validation, builtins, and the run loop.

A scenario is a single JSON document carrying the target shape, the body
frames, the initial condition, one controller parameterization, and the
integration settings.  Builtins provide a ready-made four-agent rectangle
study (complete graph, side lengths 3 and 4, diagonal 5) under each
controller so the standard experiments run with one flag.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .averaging import l_transform, make_transformed_rhs
from .controllers import (
    BodyFrames,
    DistanceOnlyConfig,
    GradientControllerConfig,
)
from .dynamics import (
    IntegratorConfig,
    Trajectory,
    integrate,
    make_distance_only_rhs,
    make_gradient_rhs,
    make_averaged_rhs,
)
from .energy import SystemState
from .rigidity import FormationSpec, UndirectedGraph

SCHEMA_VERSION = 1

CONTROLLER_KINDS = ("gradient", "distance-only", "averaged", "transformed")


class ScenarioValidationError(ValueError):
    """Scenario document failed validation before any simulation ran."""


@dataclass(frozen=True)
class Scenario:
    """Validated scenario with typed components plus the raw document."""

    name: str
    spec: FormationSpec
    frames: BodyFrames
    initial: SystemState
    controller_kind: str
    gradient_config: GradientControllerConfig | None
    distance_config: DistanceOnlyConfig | None
    integrator: IntegratorConfig
    seed: int
    distance_noise_stddev: float | None
    sublevel_bound: float
    target_configuration: np.ndarray | None
    fit_window_fraction: tuple[float, float]
    sample_count: int
    doc: dict = field(repr=False)
    config_hash: str = ""

    @property
    def damping(self) -> np.ndarray:
        if self.gradient_config is not None:
            return self.gradient_config.damping
        return self.distance_config.damping

    def with_seed(self, seed: int) -> "Scenario":
        doc = dict(self.doc)
        doc["seed"] = int(seed)
        return scenario_from_dict(doc)


def config_hash_of(doc: dict) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _require(doc: dict, key: str):
    if key not in doc:
        raise ScenarioValidationError(f"scenario is missing required key '{key}'")
    return doc[key]


def scenario_from_dict(doc: dict) -> Scenario:
    """Build and fully validate a Scenario from a JSON-style document.

    All dimension, positivity and distinctness constraints are enforced
    here, before any simulation starts.
    """
    try:
        name = str(doc.get("name", "unnamed"))
        graph_doc = _require(doc, "graph")
        graph = UndirectedGraph(
            vertex_count=int(_require(graph_doc, "vertex_count")),
            edges=tuple((int(i), int(j)) for i, j in _require(graph_doc, "edges")),
        )
        ambient_dim = int(_require(doc, "ambient_dim"))
        distances = {}
        for item in _require(doc, "desired_distances"):
            i, j, d = int(item[0]), int(item[1]), float(item[2])
            distances[(i, j)] = d
        spec = FormationSpec(graph=graph, ambient_dim=ambient_dim, desired_distances=distances)

        frames_doc = _require(doc, "frames")
        if "angles" in frames_doc:
            if ambient_dim != 2:
                raise ScenarioValidationError("frame angles are only defined for ambient_dim 2")
            angles = [float(a) for a in frames_doc["angles"]]
            if len(angles) != graph.vertex_count:
                raise ScenarioValidationError("need one frame angle per agent")
            frames = BodyFrames.planar_rotations(angles)
        elif "bases" in frames_doc:
            frames = BodyFrames(np.asarray(frames_doc["bases"], dtype=float))
        else:
            raise ScenarioValidationError("frames must specify 'angles' or 'bases'")
        if frames.agent_count != graph.vertex_count or frames.ambient_dim != ambient_dim:
            raise ScenarioValidationError("frame dimensions do not match the graph")

        positions = np.asarray(_require(doc, "initial_positions"), dtype=float)
        velocities = np.asarray(_require(doc, "initial_velocities"), dtype=float)
        expected = (graph.vertex_count, ambient_dim)
        if positions.shape != expected or velocities.shape != expected:
            raise ScenarioValidationError(
                f"initial positions/velocities must have shape {expected}"
            )
        initial = SystemState(
            t=float(doc.get("initial_time", 0.0)),
            p=positions.ravel(),
            v=velocities.ravel(),
        )

        ctl_doc = _require(doc, "controller")
        kind = str(_require(ctl_doc, "kind"))
        if kind not in CONTROLLER_KINDS:
            raise ScenarioValidationError(
                f"controller kind '{kind}' not in {CONTROLLER_KINDS}"
            )
        gradient_config = None
        distance_config = None
        damping = [float(r) for r in _require(ctl_doc, "damping")]
        if len(damping) != graph.vertex_count:
            raise ScenarioValidationError("need one damping gain per agent")
        if kind == "gradient":
            gradient_config = GradientControllerConfig(damping=damping)
        else:
            distance_config = DistanceOnlyConfig(
                damping=damping,
                offsets=[float(r) for r in _require(ctl_doc, "offsets")],
                omega=float(_require(ctl_doc, "omega")),
                frequency_coefficients=np.asarray(
                    _require(ctl_doc, "frequency_coefficients"), dtype=float
                ),
                phases=np.asarray(_require(ctl_doc, "phases"), dtype=float),
            )
            if distance_config.ambient_dim != ambient_dim:
                raise ScenarioValidationError(
                    "frequency coefficients must have one column per ambient dimension"
                )

        integ_doc = _require(doc, "integrator")
        integrator = IntegratorConfig(
            step=float(_require(integ_doc, "step")),
            horizon=float(_require(integ_doc, "horizon")),
            record_every=int(integ_doc.get("record_every", 1)),
            samples_per_period=int(integ_doc.get("samples_per_period", 20)),
        )

        noise = doc.get("distance_noise_stddev")
        if noise is not None:
            noise = float(noise)
            if noise < 0.0:
                raise ScenarioValidationError("distance noise stddev cannot be negative")
            if kind == "gradient":
                raise ScenarioValidationError(
                    "distance noise only applies to distance-measuring controllers"
                )

        analysis = doc.get("analysis", {})
        sublevel_bound = float(analysis.get("sublevel_bound", 1.0))
        if sublevel_bound <= 0.0:
            raise ScenarioValidationError("sublevel bound must be positive")
        target = analysis.get("target_configuration")
        if target is not None:
            target = np.asarray(target, dtype=float)
            if target.shape != expected:
                raise ScenarioValidationError(f"target configuration must have shape {expected}")
            target = target.ravel()
        window = analysis.get("fit_window_fraction", [0.2, 1.0])
        fit_window = (float(window[0]), float(window[1]))
        if not (0.0 <= fit_window[0] < fit_window[1] <= 1.0):
            raise ScenarioValidationError("fit window fractions must satisfy 0 <= a < b <= 1")
        sample_count = int(analysis.get("sample_count", 512))
        if sample_count < 2:
            raise ScenarioValidationError("analysis sample count must be at least 2")

        return Scenario(
            name=name,
            spec=spec,
            frames=frames,
            initial=initial,
            controller_kind=kind,
            gradient_config=gradient_config,
            distance_config=distance_config,
            integrator=integrator,
            seed=int(doc.get("seed", 0)),
            distance_noise_stddev=noise,
            sublevel_bound=sublevel_bound,
            target_configuration=target,
            fit_window_fraction=fit_window,
            sample_count=sample_count,
            doc=doc,
            config_hash=config_hash_of(doc),
        )
    except ScenarioValidationError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ScenarioValidationError(str(exc)) from exc


def _rectangle_base(name: str) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": name,
        "graph": {
            "vertex_count": 4,
            "edges": [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]],
        },
        "ambient_dim": 2,
        "desired_distances": [
            [0, 1, 3.0],
            [0, 2, 5.0],
            [0, 3, 4.0],
            [1, 2, 4.0],
            [1, 3, 5.0],
            [2, 3, 3.0],
        ],
        "frames": {"angles": [(i + 1) * math.pi / 3.0 for i in range(4)]},
        "initial_positions": [[0.0, 0.0], [-1.0, 4.0], [5.0, 3.0], [3.0, 0.0]],
        "initial_velocities": [[0.0, 0.0]] * 4,
        "initial_time": 0.0,
        "seed": 7,
        "distance_noise_stddev": None,
        "analysis": {
            "sublevel_bound": 1.0,
            "target_configuration": [[0.0, 0.0], [3.0, 0.0], [3.0, 4.0], [0.0, 4.0]],
            "fit_window_fraction": [0.2, 1.0],
            "sample_count": 512,
        },
    }


def _rectangle_dither_controller(offsets: float) -> dict:
    return {
        "kind": "distance-only",
        "damping": [50.0] * 4,
        "offsets": [offsets] * 4,
        "omega": 10.0,
        "frequency_coefficients": [[2 * i + k + 1 for k in range(2)] for i in range(4)],
        "phases": [[-math.pi / 2.0] * 2 for _ in range(4)],
    }


def builtin_scenarios() -> dict[str, dict]:
    """Named ready-made scenario documents for the four-agent rectangle study."""
    gradient = _rectangle_base("rectangle-gradient")
    gradient["controller"] = {"kind": "gradient", "damping": [50.0] * 4}
    gradient["integrator"] = {
        "step": 0.002,
        "horizon": 10.0,
        "record_every": 1,
        "samples_per_period": 20,
    }

    dither = _rectangle_base("rectangle-distance-only")
    dither["controller"] = _rectangle_dither_controller(1.0)
    dither["integrator"] = {
        "step": 0.002,
        "horizon": 20.0,
        "record_every": 1,
        "samples_per_period": 20,
    }

    dither0 = _rectangle_base("rectangle-distance-only-rho0")
    dither0["controller"] = _rectangle_dither_controller(0.0)
    dither0["integrator"] = {
        "step": 0.002,
        "horizon": 20.0,
        "record_every": 1,
        "samples_per_period": 20,
    }

    return {
        "rectangle-gradient": gradient,
        "rectangle-distance-only": dither,
        "rectangle-distance-only-rho0": dither0,
    }


def load_scenario(source: str | Path) -> Scenario:
    """Load a scenario from a builtin name or a JSON file path."""
    builtins = builtin_scenarios()
    if isinstance(source, str) and source in builtins:
        return scenario_from_dict(builtins[source])
    path = Path(source)
    if not path.exists():
        raise ScenarioValidationError(
            f"'{source}' is neither a builtin scenario ({', '.join(sorted(builtins))}) "
            f"nor an existing file"
        )
    with open(path) as fh:
        doc = json.load(fh)
    return scenario_from_dict(doc)


def effective_step(scenario: Scenario) -> float:
    """Integration step after dither resolution: at least samples_per_period
    steps per fastest sinusoid period for time-dependent controllers."""
    h = scenario.integrator.step
    if scenario.controller_kind in ("distance-only", "transformed"):
        cfg = scenario.distance_config
        h = min(h, cfg.fastest_period / scenario.integrator.samples_per_period)
    return h


def build_rhs(scenario: Scenario):
    """RHS closure and initial state for the scenario's controller kind."""
    spec, frames = scenario.spec, scenario.frames
    kind = scenario.controller_kind
    initial = scenario.initial
    if kind == "gradient":
        return make_gradient_rhs(spec, frames, scenario.gradient_config), initial
    cfg = scenario.distance_config
    if kind == "distance-only":
        rng = None
        if scenario.distance_noise_stddev is not None:
            rng = np.random.default_rng(scenario.seed)
        return (
            make_distance_only_rhs(
                spec, frames, cfg, measurement_noise=scenario.distance_noise_stddev, rng=rng
            ),
            initial,
        )
    if kind == "averaged":
        return make_averaged_rhs(spec, frames, cfg), initial
    if kind == "transformed":
        transformed = l_transform(spec, frames, cfg, initial, initial.t)
        return make_transformed_rhs(spec, frames, cfg), transformed
    raise ScenarioValidationError(f"unknown controller kind '{kind}'")


def run_scenario(scenario: Scenario) -> Trajectory:
    """Integrate the scenario and return the recorded trajectory."""
    rhs, initial = build_rhs(scenario)
    h = effective_step(scenario)
    cfg = replace(scenario.integrator, step=h)
    metadata = {
        "scenario": scenario.name,
        "config_hash": scenario.config_hash,
        "controller_kind": scenario.controller_kind,
        "step": h,
        "seed": scenario.seed,
    }
    if scenario.distance_config is not None:
        metadata["omega"] = scenario.distance_config.omega
    return integrate(rhs, initial, cfg, metadata=metadata)
