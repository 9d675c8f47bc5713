"""Scenario configs, strict validation, and run artifacts.

A scenario is a JSON document that fully specifies one control problem:
plant, horizon, cost terms, noise, initial-state distribution, perturbation
schedule, and solver choice.  Scenarios double as test fixtures, so parsing
is strict: unknown keys are rejected and every error names the offending
field path.

Schema (all weights accept a scalar, a diagonal vector, or a full matrix;
matrices are lists of rows):

    {
      "name": str,
      "description": str (optional),
      "metadata": {...} (optional, carried through to reports),
      "horizon": int, "dt": float,
      "plant": {"kind": "double_integrator", "dim": int,
                "exact_discretization": bool (optional)}
             | {"kind": "linear", "A": [[..]], "B": [[..]]}
             | {"kind": "planar_arm", "link_lengths": [..],
                "theta_lower": [..] (optional), "theta_upper": [..] (optional),
                "consistent_velocity": bool (optional)},
      "cost": {"control_weight": weight,
               "viapoints": [{"t": int, "target": [..], "weight": weight}, ..],
               "correlations": [{"t1": int, "t2": int,
                                 "C": "identity" | {"diag": [..]} | [[..]],
                                 "c": [..] (optional, default 0),
                                 "weight": weight}, ..] (optional)},
      "noise": {"mu_x0": [..], "sigma_x0": [..], "sigma_noise": [..]} (optional),
      "initial_state": {"kind": "fixed", "value": [..]}
                     | {"kind": "uniform_box", "center": [..], "halfwidth": [..]}
                     | {"kind": "arm_joints", "theta": [..],
                        "theta_dot": [..] (optional),
                        "perturb_theta": float (optional)} (optional),
      "perturbations": [{"t": int, "impulse": [..]}, ..] (optional),
      "solver": {"kind": "esls"}
              | {"kind": "isls", "tolerance": float, "max_iterations": int,
                 "regularization": float, "hessian_floor": float|null,
                 "stationarity_tolerance": float|null}
              | {"kind": "dp-lqt"} | {"kind": "batch-lqt"}
              | {"kind": "mpc-lqt", "recompute_time": int}
    }

Artifacts written per run: ``controller.bin`` (numpy archive of the control
law), ``maps.bin`` (feedforward adaptation maps, linear solvers only),
``trajectory.csv``, ``report.json`` (seeds, config hash, realized cost,
residuals), and optionally ``trace.csv`` with per-iteration solver progress.
"""

from __future__ import annotations

import copy
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adaptation import precompute_gain_maps
from .costs import (
    CorrelationSpec,
    CostSpec,
    StateCostFunction,
    add_correlation,
    build_viapoint_cost,
)
from .isls import IslsConfig, TrackingObjective, isls_optimize
from .plants import (
    LinearPlant,
    OpenLoopController,
    StepFeedbackController,
    batch_lqt,
    double_integrator_plant,
    dp_lqt,
    linear_system_from_plant,
    mpc_lqt_rollout,
    planar_arm_plant,
    rollout,
)
from .solver import Controller, extract_controller, solve_esls
from .stacked import BlockLowerTriangular, NoiseModel, build_stacked

ARTIFACT_FORMAT_VERSION = 1
SOLVER_KINDS = ("esls", "isls", "dp-lqt", "mpc-lqt", "batch-lqt")


class ValidationError(ValueError):
    """Configuration rejected; the message names the offending field."""


class SolverNotConverged(RuntimeError):
    """The iterative solver exhausted its iteration budget."""


# -- validation helpers --------------------------------------------------------


def _expect_mapping(value, path):
    if not isinstance(value, dict):
        raise ValidationError(f"{path}: expected an object, got {type(value).__name__}")
    return value


def _expect_keys(d, path, required, optional=()):
    unknown = sorted(set(d) - set(required) - set(optional))
    if unknown:
        raise ValidationError(f"{path}: unknown key(s) {unknown}")
    missing = sorted(set(required) - set(d))
    if missing:
        raise ValidationError(f"{path}: missing required key(s) {missing}")


def _as_int(value, path, minimum=None, maximum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{path}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ValidationError(f"{path}: {value} below minimum {minimum}")
    if maximum is not None and value > maximum:
        raise ValidationError(f"{path}: {value} above maximum {maximum}")
    return value


def _as_float(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{path}: expected a number, got {value!r}")
    value = float(value)
    if minimum is not None and value < minimum:
        raise ValidationError(f"{path}: {value} below minimum {minimum}")
    return value


def _as_vector(value, path, length=None):
    if not isinstance(value, list) or any(isinstance(v, (list, dict)) for v in value):
        raise ValidationError(f"{path}: expected a flat list of numbers")
    vec = np.array([_as_float(v, f"{path}[{i}]") for i, v in enumerate(value)])
    if length is not None and vec.size != length:
        raise ValidationError(f"{path}: expected length {length}, got {vec.size}")
    return vec


def _as_matrix(value, path, shape=None):
    if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
        raise ValidationError(f"{path}: expected a list of rows")
    rows = [_as_vector(r, f"{path}[{i}]") for i, r in enumerate(value)]
    widths = {r.size for r in rows}
    if len(widths) != 1:
        raise ValidationError(f"{path}: ragged rows {sorted(widths)}")
    mat = np.vstack(rows)
    if shape is not None and mat.shape != shape:
        raise ValidationError(f"{path}: expected shape {shape}, got {mat.shape}")
    return mat


def _as_weight(value, path, dim):
    """Scalar, diagonal vector, or full matrix, normalized to (dim, dim)."""
    if isinstance(value, bool):
        raise ValidationError(f"{path}: expected a weight, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value) * np.eye(dim)
    if isinstance(value, list) and value and isinstance(value[0], list):
        mat = _as_matrix(value, path, shape=(dim, dim))
        if not np.allclose(mat, mat.T, atol=1e-12):
            raise ValidationError(f"{path}: weight matrix must be symmetric")
        return mat
    if isinstance(value, list):
        return np.diag(_as_vector(value, path, length=dim))
    raise ValidationError(f"{path}: expected scalar, diagonal list, or matrix")


def _as_transform(value, path, dim):
    """Correlation map C: 'identity', {'diag': [...]}, or a full matrix."""
    if value == "identity":
        return np.eye(dim)
    if isinstance(value, dict):
        _expect_keys(value, path, required=("diag",))
        return np.diag(_as_vector(value["diag"], f"{path}.diag", length=dim))
    if isinstance(value, list):
        return _as_matrix(value, path, shape=(dim, dim))
    raise ValidationError(f"{path}: expected 'identity', {{'diag': [...]}} or a matrix")


# -- scenario ------------------------------------------------------------------


_PLANT_KEYS = {
    "double_integrator": (("kind", "dim"), ("exact_discretization",)),
    "linear": (("kind", "A", "B"), ()),
    "planar_arm": (("kind", "link_lengths"),
                   ("theta_lower", "theta_upper", "consistent_velocity")),
}


@dataclass
class Scenario:
    """Validated scenario; ``raw`` round-trips the source JSON losslessly."""

    name: str
    horizon: int
    dt: float
    plant: dict
    cost: dict
    solver: dict
    noise: dict = None
    initial_state: dict = None
    perturbations: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    description: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, config):
        config = _expect_mapping(config, "scenario")
        _expect_keys(
            config, "scenario",
            required=("name", "horizon", "dt", "plant", "cost", "solver"),
            optional=("description", "metadata", "noise", "initial_state",
                      "perturbations"),
        )
        name = config["name"]
        if not isinstance(name, str) or not name:
            raise ValidationError("scenario.name: expected a nonempty string")
        horizon = _as_int(config["horizon"], "scenario.horizon", minimum=1)
        dt = _as_float(config["dt"], "scenario.dt", minimum=0.0)

        plant_cfg = _expect_mapping(config["plant"], "plant")
        kind = plant_cfg.get("kind")
        if kind not in _PLANT_KEYS:
            raise ValidationError(
                f"plant.kind: unknown kind {kind!r}; expected one of {sorted(_PLANT_KEYS)}"
            )
        required, optional = _PLANT_KEYS[kind]
        _expect_keys(plant_cfg, "plant", required=required, optional=optional)
        state_dim, input_dim = _plant_dims(plant_cfg)

        cost_cfg = _expect_mapping(config["cost"], "cost")
        _expect_keys(cost_cfg, "cost", required=("control_weight",),
                     optional=("viapoints", "correlations"))
        _as_weight(cost_cfg["control_weight"], "cost.control_weight", input_dim)
        for i, vp in enumerate(cost_cfg.get("viapoints", [])):
            p = f"cost.viapoints[{i}]"
            _expect_keys(_expect_mapping(vp, p), p, required=("t", "target", "weight"))
            _as_int(vp["t"], f"{p}.t", minimum=0, maximum=horizon)
            _as_vector(vp["target"], f"{p}.target", length=state_dim)
            _as_weight(vp["weight"], f"{p}.weight", state_dim)
        for i, corr in enumerate(cost_cfg.get("correlations", [])):
            p = f"cost.correlations[{i}]"
            _expect_keys(_expect_mapping(corr, p), p,
                         required=("t1", "t2", "C", "weight"), optional=("c",))
            t1 = _as_int(corr["t1"], f"{p}.t1", minimum=0, maximum=horizon)
            t2 = _as_int(corr["t2"], f"{p}.t2", minimum=0, maximum=horizon)
            if t1 >= t2:
                raise ValidationError(f"{p}: requires t1 < t2, got ({t1}, {t2})")
            _as_transform(corr["C"], f"{p}.C", state_dim)
            if "c" in corr:
                _as_vector(corr["c"], f"{p}.c", length=state_dim)
            _as_weight(corr["weight"], f"{p}.weight", state_dim)

        noise_cfg = config.get("noise")
        if noise_cfg is not None:
            _expect_keys(_expect_mapping(noise_cfg, "noise"), "noise",
                         required=("mu_x0", "sigma_x0", "sigma_noise"))
            _as_vector(noise_cfg["mu_x0"], "noise.mu_x0", length=state_dim)
            for key in ("sigma_x0", "sigma_noise"):
                vec = _as_vector(noise_cfg[key], f"noise.{key}", length=state_dim)
                if np.any(vec < 0):
                    raise ValidationError(f"noise.{key}: variances must be nonnegative")

        init_cfg = config.get("initial_state")
        if init_cfg is not None:
            _validate_initial_state(init_cfg, plant_cfg, state_dim)

        for i, pert in enumerate(config.get("perturbations", [])):
            p = f"perturbations[{i}]"
            _expect_keys(_expect_mapping(pert, p), p, required=("t", "impulse"))
            _as_int(pert["t"], f"{p}.t", minimum=0, maximum=horizon)
            _as_vector(pert["impulse"], f"{p}.impulse", length=state_dim)

        solver_cfg = _expect_mapping(config["solver"], "solver")
        skind = solver_cfg.get("kind")
        if skind not in SOLVER_KINDS:
            raise ValidationError(
                f"solver.kind: unknown kind {skind!r}; expected one of {list(SOLVER_KINDS)}"
            )
        if skind == "isls":
            _expect_keys(solver_cfg, "solver", required=("kind",),
                         optional=("tolerance", "max_iterations", "regularization",
                                   "hessian_floor", "stationarity_tolerance"))
            if "tolerance" in solver_cfg:
                _as_float(solver_cfg["tolerance"], "solver.tolerance", minimum=0.0)
            if "max_iterations" in solver_cfg:
                _as_int(solver_cfg["max_iterations"], "solver.max_iterations", minimum=1)
            if "regularization" in solver_cfg:
                _as_float(solver_cfg["regularization"], "solver.regularization", minimum=0.0)
            if "hessian_floor" in solver_cfg and solver_cfg["hessian_floor"] is not None:
                _as_float(solver_cfg["hessian_floor"], "solver.hessian_floor")
            if ("stationarity_tolerance" in solver_cfg
                    and solver_cfg["stationarity_tolerance"] is not None):
                _as_float(solver_cfg["stationarity_tolerance"],
                          "solver.stationarity_tolerance", minimum=0.0)
        elif skind == "mpc-lqt":
            _expect_keys(solver_cfg, "solver", required=("kind", "recompute_time"))
            _as_int(solver_cfg["recompute_time"], "solver.recompute_time",
                    minimum=1, maximum=horizon)
        else:
            _expect_keys(solver_cfg, "solver", required=("kind",))
        if skind == "esls" and plant_cfg["kind"] == "planar_arm":
            raise ValidationError(
                "solver.kind: esls requires a linear plant; use isls for planar_arm"
            )

        metadata = config.get("metadata", {})
        if not isinstance(metadata, dict):
            raise ValidationError("scenario.metadata: expected an object")
        return cls(
            name=name, horizon=horizon, dt=dt,
            plant=copy.deepcopy(plant_cfg), cost=copy.deepcopy(cost_cfg),
            solver=copy.deepcopy(solver_cfg),
            noise=copy.deepcopy(noise_cfg),
            initial_state=copy.deepcopy(init_cfg),
            perturbations=copy.deepcopy(config.get("perturbations", [])),
            metadata=copy.deepcopy(metadata),
            description=config.get("description", ""),
            raw=copy.deepcopy(config),
        )

    def to_dict(self):
        return copy.deepcopy(self.raw)

    @property
    def state_dim(self):
        return _plant_dims(self.plant)[0]

    @property
    def input_dim(self):
        return _plant_dims(self.plant)[1]


def _plant_dims(plant_cfg):
    kind = plant_cfg["kind"]
    if kind == "double_integrator":
        dim = _as_int(plant_cfg["dim"], "plant.dim", minimum=1)
        return 2 * dim, dim
    if kind == "linear":
        A = _as_matrix(plant_cfg["A"], "plant.A")
        if A.shape[0] != A.shape[1]:
            raise ValidationError("plant.A: must be square")
        B = _as_matrix(plant_cfg["B"], "plant.B")
        if B.shape[0] != A.shape[0]:
            raise ValidationError("plant.B: row count must match plant.A")
        return A.shape[0], B.shape[1]
    if kind == "planar_arm":
        links = _as_vector(plant_cfg["link_lengths"], "plant.link_lengths")
        if links.size < 1 or np.any(links <= 0):
            raise ValidationError("plant.link_lengths: expected positive lengths")
        p = links.size
        return 3 * p + 5, p
    raise ValidationError(f"plant.kind: unknown kind {kind!r}")


def _validate_initial_state(init_cfg, plant_cfg, state_dim):
    init_cfg = _expect_mapping(init_cfg, "initial_state")
    kind = init_cfg.get("kind")
    if kind == "fixed":
        _expect_keys(init_cfg, "initial_state", required=("kind", "value"))
        _as_vector(init_cfg["value"], "initial_state.value", length=state_dim)
    elif kind == "uniform_box":
        _expect_keys(init_cfg, "initial_state", required=("kind", "center", "halfwidth"))
        _as_vector(init_cfg["center"], "initial_state.center", length=state_dim)
        hw = _as_vector(init_cfg["halfwidth"], "initial_state.halfwidth", length=state_dim)
        if np.any(hw < 0):
            raise ValidationError("initial_state.halfwidth: must be nonnegative")
    elif kind == "arm_joints":
        if plant_cfg["kind"] != "planar_arm":
            raise ValidationError("initial_state.kind: arm_joints requires a planar_arm plant")
        _expect_keys(init_cfg, "initial_state", required=("kind", "theta"),
                     optional=("theta_dot", "perturb_theta"))
        p = len(plant_cfg["link_lengths"])
        _as_vector(init_cfg["theta"], "initial_state.theta", length=p)
        if "theta_dot" in init_cfg:
            _as_vector(init_cfg["theta_dot"], "initial_state.theta_dot", length=p)
        if "perturb_theta" in init_cfg:
            _as_float(init_cfg["perturb_theta"], "initial_state.perturb_theta", minimum=0.0)
    else:
        raise ValidationError(
            f"initial_state.kind: unknown kind {kind!r}; "
            "expected fixed, uniform_box, or arm_joints"
        )


def load_scenario(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"scenario file {path}: {exc}") from None
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"scenario file {path}: invalid JSON ({exc})") from None
    return Scenario.from_dict(config)


def config_sha256(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# -- builders ------------------------------------------------------------------


def build_plant(scenario):
    cfg = scenario.plant
    if cfg["kind"] == "double_integrator":
        return double_integrator_plant(
            cfg["dim"], scenario.dt,
            exact_discretization=cfg.get("exact_discretization", False),
        )
    if cfg["kind"] == "linear":
        return LinearPlant(_as_matrix(cfg["A"], "plant.A"),
                           _as_matrix(cfg["B"], "plant.B"), dt=scenario.dt)
    if cfg["kind"] == "planar_arm":
        p = len(cfg["link_lengths"])
        lower = cfg.get("theta_lower")
        upper = cfg.get("theta_upper")
        return planar_arm_plant(
            np.asarray(cfg["link_lengths"], float), scenario.dt,
            theta_lower=None if lower is None else np.asarray(lower, float),
            theta_upper=None if upper is None else np.asarray(upper, float),
            consistent_velocity=cfg.get("consistent_velocity", False),
        )
    raise ValidationError(f"plant.kind: unknown kind {cfg['kind']!r}")


def _cost_pieces(scenario):
    m, n = scenario.state_dim, scenario.input_dim
    cw = _as_weight(scenario.cost["control_weight"], "cost.control_weight", n)
    viapoints = [
        (vp["t"], np.asarray(vp["target"], float),
         _as_weight(vp["weight"], "cost.viapoints.weight", m))
        for vp in scenario.cost.get("viapoints", [])
    ]
    correlations = [
        CorrelationSpec(
            corr["t1"], corr["t2"],
            _as_transform(corr["C"], "cost.correlations.C", m),
            np.asarray(corr.get("c", np.zeros(m)), float),
            _as_weight(corr["weight"], "cost.correlations.weight", m),
        )
        for corr in scenario.cost.get("correlations", [])
    ]
    return cw, viapoints, correlations


def build_cost(scenario):
    """Assembled stacked quadratic cost of the scenario."""
    m, n = scenario.state_dim, scenario.input_dim
    cw, viapoints, correlations = _cost_pieces(scenario)
    cost = build_viapoint_cost(scenario.horizon, viapoints, cw,
                               state_dim=m, input_dim=n)
    for corr in correlations:
        cost = add_correlation(cost, corr)
    return cost


def build_objective(scenario):
    """The scenario cost as a pointwise objective for the iterative solver."""
    m, n = scenario.state_dim, scenario.input_dim
    cw, viapoints, correlations = _cost_pieces(scenario)
    state_cost = StateCostFunction.quadratic_viapoints(scenario.horizon, viapoints, m)
    return TrackingObjective(scenario.horizon, m, n, state_cost,
                             correlations=correlations, control_weight=cw)


def build_noise(scenario):
    m = scenario.state_dim
    if scenario.noise is None:
        return NoiseModel.zero(scenario.horizon, m)
    cfg = scenario.noise
    return NoiseModel(scenario.horizon,
                      np.asarray(cfg["mu_x0"], float),
                      np.asarray(cfg["sigma_x0"], float),
                      np.asarray(cfg["sigma_noise"], float))


def draw_initial_state(scenario, rng, plant):
    """One initial state; distribution scenarios consume entropy from rng."""
    cfg = scenario.initial_state
    if cfg is None:
        if scenario.noise is not None:
            mu = np.asarray(scenario.noise["mu_x0"], float)
            sig = np.asarray(scenario.noise["sigma_x0"], float)
            return mu + rng.standard_normal(mu.size) * np.sqrt(sig)
        return np.zeros(scenario.state_dim)
    if cfg["kind"] == "fixed":
        return np.asarray(cfg["value"], float)
    if cfg["kind"] == "uniform_box":
        center = np.asarray(cfg["center"], float)
        hw = np.asarray(cfg["halfwidth"], float)
        return center + rng.uniform(-1.0, 1.0, size=center.size) * hw
    if cfg["kind"] == "arm_joints":
        theta = np.asarray(cfg["theta"], float)
        if cfg.get("perturb_theta"):
            theta = theta + rng.uniform(-1.0, 1.0, size=theta.size) * cfg["perturb_theta"]
        theta_dot = np.asarray(cfg.get("theta_dot", np.zeros_like(theta)), float)
        return plant.augment(theta, theta_dot)
    raise ValidationError(f"initial_state.kind: unknown kind {cfg['kind']!r}")


# -- artifacts -----------------------------------------------------------------


def write_controller_artifact(path, controller):
    """Serialize a control law to a numpy archive (.bin, versioned)."""
    arrays = {"format_version": np.array(ARTIFACT_FORMAT_VERSION)}
    if isinstance(controller, Controller):
        arrays["kind"] = np.array("affine_memory")
        arrays["K"] = controller.K.dense
        arrays["k"] = controller.k
        arrays["row_block_dim"] = np.array(controller.input_dim)
        arrays["col_block_dim"] = np.array(controller.state_dim)
        if controller.nominal_x is not None:
            arrays["nominal_x"] = controller.nominal_x
            arrays["nominal_u"] = controller.nominal_u
    elif isinstance(controller, StepFeedbackController):
        arrays["kind"] = np.array("step_feedback")
        arrays["gains"] = controller.gains
        arrays["offsets"] = controller.offsets
    elif isinstance(controller, OpenLoopController):
        arrays["kind"] = np.array("open_loop")
        arrays["inputs"] = controller.inputs
        arrays["state_dim"] = np.array(controller.state_dim)
    else:
        raise TypeError(f"cannot serialize controller of type {type(controller).__name__}")
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_controller_artifact(path):
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != ARTIFACT_FORMAT_VERSION:
            raise ValidationError(
                f"controller artifact {path}: unsupported format version {version}"
            )
        kind = str(data["kind"])
        if kind == "affine_memory":
            K = BlockLowerTriangular(data["K"], int(data["row_block_dim"]),
                                     int(data["col_block_dim"]))
            nominal_x = data["nominal_x"] if "nominal_x" in data else None
            nominal_u = data["nominal_u"] if "nominal_u" in data else None
            return Controller(K, data["k"], nominal_x=nominal_x, nominal_u=nominal_u)
        if kind == "step_feedback":
            return StepFeedbackController(data["gains"], data["offsets"])
        if kind == "open_loop":
            return OpenLoopController(data["inputs"], int(data["state_dim"]))
    raise ValidationError(f"controller artifact {path}: unknown kind {kind!r}")


def write_maps_artifact(path, maps, cost):
    """Adaptation maps plus the targets they were computed for."""
    with open(path, "wb") as fh:
        np.savez(fh,
                 format_version=np.array(ARTIFACT_FORMAT_VERSION),
                 F_x=maps.F_x, F_u=maps.F_u,
                 x_d=cost.x_d, u_d=cost.u_d)


def load_maps_artifact(path):
    from .adaptation import AdaptationMaps
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != ARTIFACT_FORMAT_VERSION:
            raise ValidationError(
                f"maps artifact {path}: unsupported format version {version}"
            )
        return AdaptationMaps(F_x=data["F_x"], F_u=data["F_u"]), data["x_d"], data["u_d"]


def write_trajectory_csv(path, trajectory, cumulative_cost):
    m = trajectory.states.shape[1]
    n = trajectory.inputs.shape[1]
    header = ["t"] + [f"x_{i}" for i in range(m)] + [f"u_{i}" for i in range(n)]
    header.append("cost_so_far")
    lines = [",".join(header)]
    for t in range(trajectory.states.shape[0]):
        row = [str(t)]
        row += [f"{v:.17g}" for v in trajectory.states[t]]
        row += [f"{v:.17g}" for v in trajectory.inputs[t]]
        row.append(f"{cumulative_cost[t]:.17g}")
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_trace_csv(path, history):
    lines = ["iteration,cost,delta_cost,alpha,step_norm"]
    for rec in history:
        lines.append(
            f"{rec.iteration},{rec.cost:.17g},{rec.delta_cost:.17g},"
            f"{rec.alpha:.17g},{rec.step_norm:.17g}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def correlation_residuals(scenario, trajectory):
    """Realized residual of each correlation, measured on its weighted rows."""
    _, _, correlations = _cost_pieces(scenario)
    out = []
    for corr in correlations:
        e = corr.C @ trajectory.states[corr.t1] + corr.c - trajectory.states[corr.t2]
        active = np.any(corr.Q_c != 0, axis=1)
        resid = float(np.max(np.abs(e[active]))) if np.any(active) else 0.0
        out.append({"t1": int(corr.t1), "t2": int(corr.t2), "residual": resid})
    return out


# -- end-to-end run ------------------------------------------------------------


def _solve_scenario(scenario, plant, x0, trace=False):
    """Dispatch on solver kind; returns (controller, solve_info, extras)."""
    kind = scenario.solver["kind"]
    extras = {}
    t_start = time.perf_counter()
    if kind in ("esls", "dp-lqt", "batch-lqt"):
        system = linear_system_from_plant(plant, scenario.horizon)
        cost = build_cost(scenario)
        cost.validate_input_weights()
        extras["cost"] = cost
        if kind == "esls":
            stacked = build_stacked(system)
            response = solve_esls(stacked, cost)
            controller = extract_controller(response)
            extras["maps"] = precompute_gain_maps(stacked, cost, controller)
            info = {"residuals": response.residuals(stacked)}
        elif kind == "dp-lqt":
            controller = dp_lqt(system, cost.diagonal_projection())
            info = {}
        else:
            stacked = build_stacked(system)
            u = batch_lqt(stacked, cost, x0=x0)
            controller = OpenLoopController(u.reshape(-1, plant.input_dim),
                                            plant.state_dim)
            info = {}
    elif kind == "isls":
        objective = build_objective(scenario)
        extras["objective"] = objective
        cfg = IslsConfig(
            tolerance=scenario.solver.get("tolerance", 1e-6),
            max_iterations=scenario.solver.get("max_iterations", 100),
            regularization=scenario.solver.get("regularization", 1e-6),
            hessian_floor=scenario.solver.get("hessian_floor"),
            stationarity_tolerance=scenario.solver.get("stationarity_tolerance"),
        )
        controller, result = isls_optimize(plant, objective, x0, config=cfg)
        if not result.converged:
            raise SolverNotConverged(
                f"iterative solve stopped after {result.iterations} iterations "
                f"(reason: {result.reason})"
            )
        info = {
            "iterations": result.iterations,
            "converged": result.converged,
            "reason": result.reason,
            "cost": result.cost,
            "stationarity": result.stationarity,
        }
        if trace:
            extras["history"] = result.history
    elif kind == "mpc-lqt":
        cost = build_cost(scenario)
        cost.validate_input_weights()
        extras["cost"] = cost
        system = linear_system_from_plant(plant, scenario.horizon)
        controller = dp_lqt(system, cost.diagonal_projection())
        info = {"recompute_time": scenario.solver["recompute_time"]}
    else:
        raise ValidationError(f"solver.kind: unknown kind {kind!r}")
    info["solve_seconds"] = time.perf_counter() - t_start
    return controller, info, extras


def run_scenario(path, seed=0, out="out", label=None, trace=False, overrides=None):
    """Solve a scenario, roll it out, and write the artifact set.

    Returns the report dict (also written as report.json).  Deterministic:
    the same (config, seed) pair reproduces every artifact byte for byte.
    """
    if isinstance(path, (dict,)):
        config = copy.deepcopy(path)
    else:
        config = load_scenario(path).raw
    if overrides:
        config = _merge_overrides(config, overrides)
    scenario = Scenario.from_dict(config)

    out_dir = Path(out) / scenario.name / (label or time.strftime("%Y%m%d-%H%M%S"))
    out_dir.mkdir(parents=True, exist_ok=True)

    plant = build_plant(scenario)
    ss = np.random.SeedSequence(seed)
    rng_init, rng_noise = (np.random.default_rng(s) for s in ss.spawn(2))
    x0 = draw_initial_state(scenario, rng_init, plant)
    noise = build_noise(scenario)
    perturbations = [(p["t"], np.asarray(p["impulse"], float))
                     for p in scenario.perturbations]

    controller, info, extras = _solve_scenario(scenario, plant, x0, trace=trace)

    kind = scenario.solver["kind"]
    if kind == "mpc-lqt":
        trajectory = mpc_lqt_rollout(
            plant, extras["cost"], scenario.solver["recompute_time"],
            noise=noise, seed=rng_noise, x0=x0, perturbations=perturbations,
        )
    else:
        trajectory = rollout(plant, controller, noise=noise, seed=rng_noise,
                             x0=x0, perturbations=perturbations)

    if "objective" in extras:
        objective = extras["objective"]
        realized_cost = objective.true_cost(trajectory.states, trajectory.inputs)
        cumulative = objective.cumulative_cost(trajectory.states, trajectory.inputs)
    else:
        cost = extras["cost"]
        realized_cost = cost.evaluate(trajectory.states, trajectory.inputs)
        cumulative = cost.cumulative_cost(trajectory.states, trajectory.inputs)

    artifacts = {}
    write_controller_artifact(out_dir / "controller.bin", controller)
    artifacts["controller"] = "controller.bin"
    if "maps" in extras:
        write_maps_artifact(out_dir / "maps.bin", extras["maps"], extras["cost"])
        artifacts["maps"] = "maps.bin"
    write_trajectory_csv(out_dir / "trajectory.csv", trajectory, cumulative)
    artifacts["trajectory"] = "trajectory.csv"
    if "history" in extras:
        write_trace_csv(out_dir / "trace.csv", extras["history"])
        artifacts["trace"] = "trace.csv"

    report = {
        "format_version": ARTIFACT_FORMAT_VERSION,
        "scenario": scenario.name,
        "config_sha256": config_sha256(config),
        "seed": int(seed),
        "solver": kind,
        "x0": [float(v) for v in x0],
        "realized_cost": float(realized_cost),
        "correlation_residuals": correlation_residuals(scenario, trajectory),
        "solver_info": _jsonable(info),
        "metadata": scenario.metadata,
        "artifacts": artifacts,
    }
    (out_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n"
    )
    report["out_dir"] = str(out_dir)
    return report


def _merge_overrides(config, overrides):
    config = copy.deepcopy(config)
    for key, value in overrides.items():
        parts = key.split(".") if isinstance(key, str) else list(key)
        node = config
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return config


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj
