"""Scenario configuration, episode and batch execution, logging, export.

A scenario file is JSON (shipped schema: scenarios/scenario.schema.json)
naming the model, timing, geometry, the task list with per-task
controller assignment and gains, path-integral parameters and seeds.
Episodes integrate the realized plant deterministically; stochasticity
enters only through the path-integral controller's internal rollouts,
so run-to-run spread in hybrid mode comes entirely from per-run seeds.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynsim import (
    DynamicsModel,
    effective_dynamics,
    step_deterministic,
    two_unicycle_model,
    unicycle_model,
)
from .errors import (
    BatchFailedError,
    NonFiniteError,
    ScenarioParseError,
    ScenarioValidationError,
)
from .picore import CostSpec, PathIntegralParams, pi_controller_step
from .tasklib import (
    PATH_INTEGRAL,
    PD,
    HierarchyLevel,
    ObstacleSpec,
    TaskHierarchy,
    make_centroid_task,
    make_distance_task,
    make_goal_task_single,
    make_obstacle_task_pair,
    make_obstacle_task_single,
)

MODELS = ("single_unicycle", "two_unicycle")
MODES = ("pd_only", "hybrid")
_MODE_ALIASES = {"pd": "pd_only", "pd_only": "pd_only", "hybrid": "hybrid"}

_SINGLE_TASKS = ("obstacle", "goal")
_TWO_TASKS = ("obstacle", "centroid", "spacing")

DEFAULT_GAIN = 4.0


@dataclass(frozen=True)
class TaskConfig:
    name: str
    controller: str = PD
    kp: float = DEFAULT_GAIN
    kd: float = DEFAULT_GAIN


@dataclass(frozen=True)
class SeedConfig:
    base: int = 0
    count: int = 100


@dataclass(frozen=True)
class Scenario:
    """Fully resolved experiment description.

    provenance maps field paths to 'file' or 'default' so invented
    defaults are never mistaken for values the experiment pins down.
    """

    model: str
    duration: float
    dt: float
    x0: np.ndarray
    tasks: tuple[TaskConfig, ...]
    obstacle: ObstacleSpec | None = None
    goal: np.ndarray | None = None
    spacing: float | None = None
    pi: PathIntegralParams | None = None
    seeds: SeedConfig = field(default_factory=SeedConfig)
    provenance: dict = field(default_factory=dict)
    source: str | None = None

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def n_agents(self) -> int:
        return 1 if self.model == "single_unicycle" else 2

    def pi_task_name(self) -> str | None:
        for tc in self.tasks:
            if tc.controller == PATH_INTEGRAL:
                return tc.name
        return None


def _schema_path() -> Path:
    return Path(__file__).parent / "scenarios" / "scenario.schema.json"


def shipped_scenario_path(name: str) -> Path:
    """Path of a scenario file bundled with the package."""
    return Path(__file__).parent / "scenarios" / f"{name}.scenario"


def load_scenario(path) -> Scenario:
    """Parse, schema-check and invariant-check a scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(exc.msg, exc.lineno, exc.colno) from exc
    return scenario_from_dict(raw, source=str(path))


def scenario_from_dict(raw: dict, source: str | None = None) -> Scenario:
    """Build a Scenario from parsed JSON, filling defaults with provenance."""
    import jsonschema

    schema = json.loads(_schema_path().read_text())
    try:
        jsonschema.validate(raw, schema)
    except jsonschema.ValidationError as exc:
        path_str = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioValidationError(path_str, exc.message) from exc

    prov: dict[str, str] = dict(raw.get("provenance", {}))

    model = raw["model"]
    duration = float(raw["T"])
    dt = float(raw["dt"])
    steps = duration / dt
    if abs(duration - round(steps) * dt) > 1e-9:
        raise ScenarioValidationError("dt", f"dt={dt} does not divide T={duration}")

    x0 = np.asarray(raw["x0"], dtype=float)
    want_dim = 4 if model == "single_unicycle" else 8
    if x0.shape != (want_dim,):
        raise ScenarioValidationError(
            "x0", f"model {model} needs {want_dim} entries, got {x0.shape}")

    obstacle = None
    if "obstacle" in raw:
        ob = raw["obstacle"]
        if "threshold" not in ob:
            prov.setdefault("obstacle.threshold", "default")
        try:
            obstacle = ObstacleSpec(
                center=(ob["cx"], ob["cy"]), radius=ob["r"],
                activation_threshold=ob.get("threshold"))
        except ValueError as exc:
            raise ScenarioValidationError("obstacle", str(exc)) from exc

    goal = None
    if "goal" in raw:
        goal = np.array([raw["goal"]["x"], raw["goal"]["y"]], dtype=float)

    spacing = float(raw["spacing_l"]) if "spacing_l" in raw else None

    valid_names = _SINGLE_TASKS if model == "single_unicycle" else _TWO_TASKS
    tasks = []
    seen = set()
    for i, tr in enumerate(raw["tasks"]):
        name = tr["name"]
        if name not in valid_names:
            raise ScenarioValidationError(
                f"tasks[{i}].name", f"'{name}' not valid for {model} "
                f"(expected one of {valid_names})")
        if name in seen:
            raise ScenarioValidationError(f"tasks[{i}].name", f"duplicate task '{name}'")
        seen.add(name)
        if "kp" not in tr:
            prov.setdefault(f"tasks.{name}.kp", "default")
        if "kd" not in tr:
            prov.setdefault(f"tasks.{name}.kd", "default")
        tasks.append(TaskConfig(
            name=name,
            controller=tr.get("controller", PD),
            kp=float(tr.get("kp", DEFAULT_GAIN)),
            kd=float(tr.get("kd", DEFAULT_GAIN)),
        ))
    n_pi = sum(1 for tc in tasks if tc.controller == PATH_INTEGRAL)
    if n_pi > 1:
        raise ScenarioValidationError(
            "tasks", f"{n_pi} tasks marked path_integral; at most one is allowed")
    if "obstacle" in seen and obstacle is None:
        raise ScenarioValidationError("obstacle", "obstacle task needs an obstacle block")
    if ("goal" in seen or "centroid" in seen) and goal is None:
        raise ScenarioValidationError("goal", "goal/centroid task needs a goal block")
    if "spacing" in seen and spacing is None:
        raise ScenarioValidationError("spacing_l", "spacing task needs spacing_l")

    pi = None
    if "pi" in raw:
        pr = raw["pi"]
        try:
            pi = PathIntegralParams(
                s_hat=float(pr["s_hat"]), alpha=float(pr["alpha"]),
                samples=int(pr["M"]), dt=dt, horizon=duration,
                running_weight=float(pr["running_weight"]) if "running_weight" in pr else None,
                horizon_cap=float(pr["horizon_cap"]) if "horizon_cap" in pr else None,
                min_ess=float(pr.get("min_ess", 2.0)),
            )
        except ValueError as exc:
            raise ScenarioValidationError("pi", str(exc)) from exc
    if n_pi == 1:
        if pi is None:
            raise ScenarioValidationError("pi", "a path_integral task needs a pi block")
        if goal is None:
            raise ScenarioValidationError(
                "goal", "the path-integral cost is goal-directed; goal block required")
        if pi.running_weight is None:
            raise ScenarioValidationError("pi.running_weight", "required in hybrid scenarios")

    if "seeds" in raw:
        seeds = SeedConfig(int(raw["seeds"].get("base", 0)),
                           int(raw["seeds"].get("count", 100)))
    else:
        seeds = SeedConfig()
        prov.setdefault("seeds", "default")

    return Scenario(
        model=model, duration=duration, dt=dt, x0=x0, tasks=tuple(tasks),
        obstacle=obstacle, goal=goal, spacing=spacing, pi=pi, seeds=seeds,
        provenance=prov, source=source,
    )


# ---------------------------------------------------------------------------
# Scenario -> runtime objects
# ---------------------------------------------------------------------------


def build_model(scn: Scenario) -> DynamicsModel:
    return unicycle_model() if scn.model == "single_unicycle" else two_unicycle_model()


def _make_task(tc: TaskConfig, scn: Scenario):
    if tc.name == "obstacle":
        maker = (make_obstacle_task_single if scn.model == "single_unicycle"
                 else make_obstacle_task_pair)
        return maker(scn.obstacle, kp=tc.kp, kd=tc.kd)
    if tc.name == "goal":
        return make_goal_task_single(scn.goal, kp=tc.kp, kd=tc.kd)
    if tc.name == "centroid":
        return make_centroid_task(scn.goal, kp=tc.kp, kd=tc.kd)
    if tc.name == "spacing":
        return make_distance_task(scn.spacing, kp=tc.kp, kd=tc.kd)
    raise ScenarioValidationError("tasks", f"unknown task '{tc.name}'")


def build_hierarchy(scn: Scenario, mode: str) -> TaskHierarchy:
    """Task hierarchy for a run mode; pd_only demotes every level to PD."""
    mode = _MODE_ALIASES.get(mode, mode)
    levels = []
    for tc in scn.tasks:
        controller = tc.controller if mode == "hybrid" else PD
        levels.append(HierarchyLevel(_make_task(tc, scn), controller))
    return TaskHierarchy(levels)


def build_cost(scn: Scenario) -> CostSpec:
    """Goal-distance cost: running w * dist, terminal the same map."""
    w = scn.pi.running_weight
    goal = scn.goal

    if scn.model == "single_unicycle":
        def dist(x):
            return np.hypot(x[..., 0] - goal[0], x[..., 1] - goal[1])
    else:
        def dist(x):
            cx = 0.5 * (x[..., 0] + x[..., 4]) - goal[0]
            cy = 0.5 * (x[..., 1] + x[..., 5]) - goal[1]
            return np.hypot(cx, cy)

    def running(x):
        return w * dist(x)

    return CostSpec(running, running)


# ---------------------------------------------------------------------------
# Trajectory log
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryLog:
    """Per-step record of one episode plus a terminal summary.

    Arrays hold n_steps + 1 rows; the final row has NaN controls and PI
    diagnostics (nothing is applied at the terminal time). Per-task
    arrays are lists indexed like task_names.
    """

    t: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    task_names: tuple[str, ...]
    task_active: np.ndarray
    task_rank_deficient: np.ndarray
    task_sigma: list[np.ndarray]
    task_error: list[np.ndarray]
    task_contribution: list[np.ndarray]
    pi_ess: np.ndarray
    pi_s_min: np.ndarray
    pi_s_mean: np.ndarray
    pi_entropy: np.ndarray
    pi_unorm: np.ndarray
    meta: dict = field(default_factory=dict)
    pi_invocations: int = 0

    # -- derived series ------------------------------------------------------

    def goal_distance_series(self) -> np.ndarray | None:
        """Distance to goal (single agent) or centroid distance (two)."""
        g = self.meta.get("goal")
        if g is None:
            return None
        if self.meta.get("model") == "two_unicycle":
            c = 0.5 * (self.states[:, 0:2] + self.states[:, 4:6])
            return np.hypot(c[:, 0] - g[0], c[:, 1] - g[1])
        return np.hypot(self.states[:, 0] - g[0], self.states[:, 1] - g[1])

    def clearance_series(self) -> np.ndarray | None:
        """Distance to the obstacle center, minimum over agents."""
        ob = self.meta.get("obstacle")
        if ob is None:
            return None
        cx, cy = ob["cx"], ob["cy"]
        d = np.hypot(self.states[:, 0] - cx, self.states[:, 1] - cy)
        if self.meta.get("model") == "two_unicycle":
            d2 = np.hypot(self.states[:, 4] - cx, self.states[:, 5] - cy)
            d = np.minimum(d, d2)
        return d

    def spacing_series(self) -> np.ndarray | None:
        if self.meta.get("model") != "two_unicycle":
            return None
        return np.hypot(self.states[:, 0] - self.states[:, 4],
                        self.states[:, 1] - self.states[:, 5])

    # -- summary -------------------------------------------------------------

    @property
    def final_goal_distance(self) -> float | None:
        s = self.goal_distance_series()
        return None if s is None else float(s[-1])

    @property
    def min_obstacle_clearance(self) -> float | None:
        s = self.clearance_series()
        return None if s is None else float(s.min())

    @property
    def oscillation_sign_changes(self) -> int:
        """Sign changes of the goal-distance slope over the last fifth."""
        s = self.goal_distance_series()
        if s is None or s.size < 3:
            return 0
        tail = s[int(math.floor(0.8 * (s.size - 1))):]
        return count_sign_changes(np.diff(tail))

    @property
    def oscillating(self) -> bool:
        return self.oscillation_sign_changes >= 3

    def summary(self) -> dict:
        return {
            "final_goal_distance": self.final_goal_distance,
            "min_obstacle_clearance": self.min_obstacle_clearance,
            "oscillation_sign_changes": self.oscillation_sign_changes,
            "oscillating": self.oscillating,
            "pi_invocations": self.pi_invocations,
        }


def count_sign_changes(series: np.ndarray) -> int:
    """Strict sign changes of a sequence, ignoring exact zeros."""
    signs = np.sign(np.asarray(series))
    signs = signs[signs != 0]
    if signs.size < 2:
        return 0
    return int(np.sum(signs[1:] != signs[:-1]))


def run_episode(scn: Scenario, mode: str, seed: int, workers: int = 1) -> TrajectoryLog:
    """Simulate one episode.

    At every step the activations are evaluated, each task's control is
    produced by its PD law or by the path-integral estimate, and the
    nested null-space composition is applied for one deterministic Euler
    step of the plant. Hybrid mode derives the sampler seed for step i
    from (seed, i).
    """
    mode = _MODE_ALIASES.get(mode)
    if mode is None:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "hybrid" and scn.pi_task_name() is None:
        raise ScenarioValidationError(
            "tasks", "hybrid mode needs exactly one task marked path_integral")
    model = build_model(scn)
    hierarchy = build_hierarchy(scn, mode)
    hybrid = mode == "hybrid"
    eff = effective_dynamics(model, hierarchy) if hybrid else None
    cost = build_cost(scn) if hybrid else None

    n = scn.n_steps
    k_tasks = len(hierarchy.levels)
    p = model.control_dim
    t_grid = np.arange(n + 1) * scn.dt
    states = np.empty((n + 1, model.state_dim))
    controls = np.full((n + 1, p), np.nan)
    active = np.zeros((n + 1, k_tasks), dtype=bool)
    rankdef = np.zeros((n + 1, k_tasks), dtype=bool)
    dims = [lv.task.dim for lv in hierarchy.levels]
    sigma = [np.full((n + 1, m), np.nan) for m in dims]
    error = [np.full((n + 1, m), np.nan) for m in dims]
    contrib = [np.full((n + 1, p), np.nan) for _ in dims]
    pi_ess = np.full(n + 1, np.nan)
    pi_s_min = np.full(n + 1, np.nan)
    pi_s_mean = np.full(n + 1, np.nan)
    pi_entropy = np.full(n + 1, np.nan)
    pi_unorm = np.full(n + 1, np.nan)
    pi_calls = 0

    x = scn.x0.copy()
    states[0] = x
    for i in range(n + 1):
        t = float(t_grid[i])
        last = i == n
        pi_control = None
        if hybrid and not last:
            try:
                est, diag = pi_controller_step(
                    eff, x, t, scn.pi, cost, (seed, i), workers)
            except NonFiniteError as exc:
                raise NonFiniteError(f"step {i} (t={t:.4f}): {exc}") from exc
            pi_control = est.control
            pi_ess[i] = diag.ess
            pi_s_min[i] = diag.s_min
            pi_s_mean[i] = diag.s_mean
            pi_entropy[i] = diag.weight_entropy
            pi_unorm[i] = diag.control_norm
            pi_calls += 1
        u, records = hierarchy.compose(x, t, pi_control)
        for k, rec in enumerate(records):
            active[i, k] = rec.active
            rankdef[i, k] = rec.rank_deficient
            sigma[k][i] = rec.sigma
            error[k][i] = rec.error
            if not last:
                contrib[k][i] = rec.contribution
        if last:
            break
        controls[i] = u
        try:
            x = step_deterministic(model, x, u, scn.dt)
        except NonFiniteError as exc:
            raise NonFiniteError(f"step {i} (t={t:.4f}): {exc}") from exc
        states[i + 1] = x

    meta = {
        "model": scn.model,
        "mode": mode,
        "seed": int(seed),
        "dt": scn.dt,
        "T": scn.duration,
        "goal": None if scn.goal is None else [float(v) for v in scn.goal],
        "spacing": scn.spacing,
        "obstacle": None if scn.obstacle is None else {
            "cx": float(scn.obstacle.center[0]),
            "cy": float(scn.obstacle.center[1]),
            "r": scn.obstacle.radius,
            "threshold": scn.obstacle.activation_threshold,
        },
        "task_names": [lv.task.name for lv in hierarchy.levels],
    }
    return TrajectoryLog(
        t=t_grid, states=states, controls=controls,
        task_names=tuple(meta["task_names"]),
        task_active=active, task_rank_deficient=rankdef,
        task_sigma=sigma, task_error=error, task_contribution=contrib,
        pi_ess=pi_ess, pi_s_min=pi_s_min, pi_s_mean=pi_s_mean,
        pi_entropy=pi_entropy, pi_unorm=pi_unorm,
        meta=meta, pi_invocations=pi_calls,
    )


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------


@dataclass
class BatchStats:
    """Cross-run aggregates on the shared time grid."""

    t: np.ndarray
    goal_mean: np.ndarray
    goal_std: np.ndarray
    spacing_mean: np.ndarray | None
    spacing_std: np.ndarray | None
    final_goal_distances: np.ndarray
    min_clearances: np.ndarray
    success_count: int
    success_distance: float
    n_runs: int
    failures: list = field(default_factory=list)


def _worker_limit(requested: int | None) -> int:
    cap = os.environ.get("HIERPI_THREADS")
    cap = int(cap) if cap else (os.cpu_count() or 1)
    if requested is None:
        return max(1, cap)
    return max(1, min(int(requested), cap))


def _episode_job(args):
    scn, mode, seed = args
    return run_episode(scn, mode, seed)


def run_batch(scn: Scenario, mode: str, n_runs: int | None = None,
              base_seed: int | None = None, workers: int | None = None,
              success_distance: float = 0.3,
              keep_logs: bool = True):
    """Run n_runs independent episodes (seed_i = base_seed + i) and aggregate.

    Episodes execute concurrently (HIERPI_THREADS caps the pool) but are
    each deterministic given their seed, and aggregation runs in run
    order, so the stats are bit-identical for any worker count. Failed
    runs are recorded and skipped; the batch raises BatchFailedError
    when more than 10 percent fail.

    Returns:
        (BatchStats, logs) with logs[i] = None for failed or dropped runs.
    """
    mode = _MODE_ALIASES.get(mode, mode)
    if n_runs is None:
        n_runs = scn.seeds.count
    if base_seed is None:
        base_seed = scn.seeds.base
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    workers = _worker_limit(workers)
    jobs = [(scn, mode, base_seed + i) for i in range(n_runs)]
    logs: list[TrajectoryLog | None] = [None] * n_runs
    failures: list[tuple[int, str]] = []
    if workers == 1 or n_runs == 1:
        for i, job in enumerate(jobs):
            try:
                logs[i] = _episode_job(job)
            except Exception as exc:  # noqa: BLE001 - per-run isolation
                failures.append((i, repr(exc)))
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=min(workers, n_runs)) as pool:
            futs = {pool.submit(_episode_job, job): i for i, job in enumerate(jobs)}
            for fut, i in futs.items():
                try:
                    logs[i] = fut.result()
                except Exception as exc:  # noqa: BLE001
                    failures.append((i, repr(exc)))
    failures.sort()
    if len(failures) > 0.1 * n_runs:
        raise BatchFailedError(failures, n_runs)

    good = [lg for lg in logs if lg is not None]
    goal = np.stack([lg.goal_distance_series() for lg in good])
    spacing = None
    if scn.model == "two_unicycle":
        spacing = np.stack([lg.spacing_series() for lg in good])
    finals = np.array([lg.final_goal_distance for lg in good])
    clear = np.array([
        np.nan if lg.min_obstacle_clearance is None else lg.min_obstacle_clearance
        for lg in good])
    stats = BatchStats(
        t=good[0].t.copy(),
        goal_mean=goal.mean(axis=0),
        goal_std=goal.std(axis=0),
        spacing_mean=None if spacing is None else spacing.mean(axis=0),
        spacing_std=None if spacing is None else spacing.std(axis=0),
        final_goal_distances=finals,
        min_clearances=clear,
        success_count=int(np.sum(finals < success_distance)),
        success_distance=success_distance,
        n_runs=n_runs,
        failures=failures,
    )
    return stats, (logs if keep_logs else [None] * n_runs)


# ---------------------------------------------------------------------------
# Export / import
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def _log_columns(log: TrajectoryLog) -> list[str]:
    cols = ["t", "agent", "px", "py", "s", "theta", "a", "omega"]
    for k in range(len(log.task_names)):
        cols.append(f"task{k + 1}_active")
        for j in range(log.task_sigma[k].shape[1]):
            cols.append(f"task{k + 1}_sigma_{j}")
        for j in range(log.task_error[k].shape[1]):
            cols.append(f"task{k + 1}_err_{j}")
    cols += ["ess", "minS", "unorm"]
    return cols


def export_log(log: TrajectoryLog, path, fmt: str = "csv") -> None:
    """Write a trajectory log.

    CSV holds the per-step table, one row per (step, agent), floats in
    shortest round-trip decimal form. JSON mirrors every record plus
    metadata and the terminal summary.
    """
    path = Path(path)
    if fmt == "csv":
        n_agents = 2 if log.meta.get("model") == "two_unicycle" else 1
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_log_columns(log))
            for i in range(log.t.shape[0]):
                for a in range(n_agents):
                    st = log.states[i, 4 * a:4 * a + 4]
                    ua = log.controls[i, 2 * a:2 * a + 2]
                    row = [_fmt(log.t[i]), str(a)]
                    row += [_fmt(v) for v in st]
                    row += [_fmt(v) for v in ua]
                    for k in range(len(log.task_names)):
                        row.append(str(int(log.task_active[i, k])))
                        row += [_fmt(v) for v in log.task_sigma[k][i]]
                        row += [_fmt(v) for v in log.task_error[k][i]]
                    row += [_fmt(log.pi_ess[i]), _fmt(log.pi_s_min[i]),
                            _fmt(log.pi_unorm[i])]
                    w.writerow(row)
    elif fmt == "json":
        payload = {
            "meta": log.meta,
            "pi_invocations": log.pi_invocations,
            "t": log.t.tolist(),
            "states": log.states.tolist(),
            "controls": _nan_list(log.controls),
            "task_names": list(log.task_names),
            "task_active": log.task_active.astype(int).tolist(),
            "task_rank_deficient": log.task_rank_deficient.astype(int).tolist(),
            "task_sigma": [_nan_list(a) for a in log.task_sigma],
            "task_error": [_nan_list(a) for a in log.task_error],
            "task_contribution": [_nan_list(a) for a in log.task_contribution],
            "pi_ess": _nan_list(log.pi_ess),
            "pi_s_min": _nan_list(log.pi_s_min),
            "pi_s_mean": _nan_list(log.pi_s_mean),
            "pi_entropy": _nan_list(log.pi_entropy),
            "pi_unorm": _nan_list(log.pi_unorm),
            "summary": log.summary(),
        }
        path.write_text(json.dumps(payload))
    else:
        raise ValueError(f"unknown format '{fmt}'")


def _nan_list(a: np.ndarray):
    if a.ndim == 1:
        return [None if not math.isfinite(v) else float(v) for v in a]
    return [_nan_list(row) for row in a]


def _from_nan_list(lst) -> np.ndarray:
    def conv(v):
        return np.nan if v is None else float(v)

    if lst and isinstance(lst[0], list):
        return np.array([[conv(v) for v in row] for row in lst], dtype=float)
    return np.array([conv(v) for v in lst], dtype=float)


def import_log(path, fmt: str | None = None) -> TrajectoryLog:
    """Read back an exported log.

    CSV restores the per-step table only (metadata lives in the JSON
    form), so derived summary fields that need the scenario geometry are
    unavailable after a CSV round trip.
    """
    path = Path(path)
    if fmt is None:
        fmt = "json" if path.suffix == ".json" else "csv"
    if fmt == "json":
        d = json.loads(path.read_text())
        return TrajectoryLog(
            t=np.array(d["t"], dtype=float),
            states=np.array(d["states"], dtype=float),
            controls=_from_nan_list(d["controls"]),
            task_names=tuple(d["task_names"]),
            task_active=np.array(d["task_active"], dtype=bool),
            task_rank_deficient=np.array(d["task_rank_deficient"], dtype=bool),
            task_sigma=[_from_nan_list(a) for a in d["task_sigma"]],
            task_error=[_from_nan_list(a) for a in d["task_error"]],
            task_contribution=[_from_nan_list(a) for a in d["task_contribution"]],
            pi_ess=_from_nan_list(d["pi_ess"]),
            pi_s_min=_from_nan_list(d["pi_s_min"]),
            pi_s_mean=_from_nan_list(d["pi_s_mean"]),
            pi_entropy=_from_nan_list(d["pi_entropy"]),
            pi_unorm=_from_nan_list(d["pi_unorm"]),
            meta=d["meta"],
            pi_invocations=int(d["pi_invocations"]),
        )
    with path.open() as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    task_ids = [c[: -len("_active")] for c in header if c.endswith("_active")]
    dims = {tid: sum(1 for c in header if c.startswith(f"{tid}_sigma_"))
            for tid in task_ids}
    agents = sorted({int(r[1]) for r in data})
    n_agents = len(agents)
    n_rows = len(data) // n_agents
    col = {c: i for i, c in enumerate(header)}
    t = np.array([float(data[i * n_agents][0]) for i in range(n_rows)])
    states = np.empty((n_rows, 4 * n_agents))
    controls = np.empty((n_rows, 2 * n_agents))
    for i in range(n_rows):
        for a in range(n_agents):
            r = data[i * n_agents + a]
            states[i, 4 * a:4 * a + 4] = [float(v) for v in r[2:6]]
            controls[i, 2 * a:2 * a + 2] = [float(v) for v in r[6:8]]
    active = np.zeros((n_rows, len(task_ids)), dtype=bool)
    sigma, error = [], []
    for k, tid in enumerate(task_ids):
        m = dims[tid]
        sg = np.empty((n_rows, m))
        er = np.empty((n_rows, m))
        for i in range(n_rows):
            r = data[i * n_agents]
            active[i, k] = r[col[f"{tid}_active"]] == "1"
            sg[i] = [float(r[col[f"{tid}_sigma_{j}"]]) for j in range(m)]
            er[i] = [float(r[col[f"{tid}_err_{j}"]]) for j in range(m)]
        sigma.append(sg)
        error.append(er)
    pi_ess = np.array([float(data[i * n_agents][col["ess"]]) for i in range(n_rows)])
    pi_s_min = np.array([float(data[i * n_agents][col["minS"]]) for i in range(n_rows)])
    pi_unorm = np.array([float(data[i * n_agents][col["unorm"]]) for i in range(n_rows)])
    nanv = np.full(n_rows, np.nan)
    return TrajectoryLog(
        t=t, states=states, controls=controls,
        task_names=tuple(task_ids),
        task_active=active,
        task_rank_deficient=np.zeros_like(active),
        task_sigma=sigma, task_error=error,
        task_contribution=[np.full((n_rows, 2 * n_agents), np.nan) for _ in task_ids],
        pi_ess=pi_ess, pi_s_min=pi_s_min, pi_s_mean=nanv.copy(),
        pi_entropy=nanv.copy(), pi_unorm=pi_unorm,
        meta={}, pi_invocations=0,
    )


def export_stats(stats: BatchStats, path, fmt: str = "csv") -> None:
    """Write batch statistics (CSV table or full JSON)."""
    path = Path(path)
    if fmt == "csv":
        two = stats.spacing_mean is not None
        cols = ["t", "goal_mean", "goal_std"] + (
            ["spacing_mean", "spacing_std"] if two else [])
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for i in range(stats.t.shape[0]):
                row = [_fmt(stats.t[i]), _fmt(stats.goal_mean[i]), _fmt(stats.goal_std[i])]
                if two:
                    row += [_fmt(stats.spacing_mean[i]), _fmt(stats.spacing_std[i])]
                w.writerow(row)
    elif fmt == "json":
        payload = {
            "t": stats.t.tolist(),
            "goal_mean": stats.goal_mean.tolist(),
            "goal_std": stats.goal_std.tolist(),
            "spacing_mean": None if stats.spacing_mean is None else stats.spacing_mean.tolist(),
            "spacing_std": None if stats.spacing_std is None else stats.spacing_std.tolist(),
            "final_goal_distances": stats.final_goal_distances.tolist(),
            "min_clearances": _nan_list(stats.min_clearances),
            "success_count": stats.success_count,
            "success_distance": stats.success_distance,
            "n_runs": stats.n_runs,
            "failures": list(stats.failures),
        }
        path.write_text(json.dumps(payload))
    else:
        raise ValueError(f"unknown format '{fmt}'")


def import_stats(path, fmt: str | None = None) -> BatchStats:
    """Read back exported batch statistics."""
    path = Path(path)
    if fmt is None:
        fmt = "json" if path.suffix == ".json" else "csv"
    if fmt == "json":
        d = json.loads(path.read_text())
        return BatchStats(
            t=np.array(d["t"], dtype=float),
            goal_mean=np.array(d["goal_mean"], dtype=float),
            goal_std=np.array(d["goal_std"], dtype=float),
            spacing_mean=None if d["spacing_mean"] is None else np.array(d["spacing_mean"]),
            spacing_std=None if d["spacing_std"] is None else np.array(d["spacing_std"]),
            final_goal_distances=np.array(d["final_goal_distances"], dtype=float),
            min_clearances=_from_nan_list(d["min_clearances"]),
            success_count=int(d["success_count"]),
            success_distance=float(d["success_distance"]),
            n_runs=int(d["n_runs"]),
            failures=[tuple(f) for f in d["failures"]],
        )
    with path.open() as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    arr = np.array([[float(v) for v in r] for r in data])
    col = {c: i for i, c in enumerate(header)}
    two = "spacing_mean" in col
    return BatchStats(
        t=arr[:, col["t"]],
        goal_mean=arr[:, col["goal_mean"]],
        goal_std=arr[:, col["goal_std"]],
        spacing_mean=arr[:, col["spacing_mean"]] if two else None,
        spacing_std=arr[:, col["spacing_std"]] if two else None,
        final_goal_distances=np.zeros(0),
        min_clearances=np.zeros(0),
        success_count=0,
        success_distance=math.nan,
        n_runs=0,
        failures=[],
    )
