"""Independent numerical oracles.

Two families of checks live here so both the test suite and the CLI can
run them:

* a one-dimensional linear-quadratic benchmark whose optimal feedback
  comes from integrating the Riccati ODE (entirely separate from the
  sampling estimator it validates), and
* finite-difference consistency checks that verify each task's claimed
  derivative data against short Euler rollouts of the plant under held
  controls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .dynsim import (
    DynamicsModel,
    EffectiveDynamics,
    effective_dynamics,
    unicycle_model,
    two_unicycle_model,
)
from .picore import CostSpec, PathIntegralParams, pi_controller_step
from .tasklib import (
    PATH_INTEGRAL,
    HierarchyLevel,
    ObstacleSpec,
    TaskHierarchy,
    TaskSpec,
    make_centroid_task,
    make_distance_task,
    make_goal_task_single,
    make_obstacle_task_pair,
    make_obstacle_task_single,
)

# ---------------------------------------------------------------------------
# Linear-quadratic benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LqInstance:
    """Scalar double-check problem dx = u dt + s_hat dw.

    Cost: 0.5 q x^2 running, 0.5 q_f x(T)^2 terminal, 0.5 alpha u^2
    control. The optimal feedback is u = -P(t) x / alpha with P from the
    Riccati ODE dP/dt = P^2 / alpha - q, P(T) = q_f.
    """

    q: float = 2.0
    q_f: float = 1.0
    alpha: float = 2.0
    s_hat: float = 0.5
    horizon: float = 1.0
    dt: float = 0.01


def riccati_gain(inst: LqInstance, t0: float = 0.0) -> float:
    """P(t0) from backward integration of the Riccati ODE."""
    sol = solve_ivp(
        lambda t, p: p * p / inst.alpha - inst.q,
        (inst.horizon, t0), [inst.q_f],
        rtol=1e-11, atol=1e-13, dense_output=True,
    )
    return float(sol.sol(t0)[0])


def lq_optimal_control(inst: LqInstance, x0: float, t0: float = 0.0) -> float:
    """Riccati-feedback control at state x0, the estimator's ground truth."""
    return -riccati_gain(inst, t0) * x0 / inst.alpha


def lq_effective(inst: LqInstance) -> EffectiveDynamics:
    """The benchmark as an EffectiveDynamics with a bare sampling channel."""

    def f(x):
        return np.zeros_like(x)

    def g(x):
        return np.broadcast_to(np.ones((1, 1)), np.shape(x)[:-1] + (1, 1))

    model = DynamicsModel(1, 1, f, g, (0,))
    hierarchy = TaskHierarchy(
        [HierarchyLevel(None, PATH_INTEGRAL)], control_dim=1)
    return effective_dynamics(model, hierarchy)


def lq_cost(inst: LqInstance) -> CostSpec:
    def running(x):
        return 0.5 * inst.q * x[..., 0] ** 2

    def terminal(x):
        return 0.5 * inst.q_f * x[..., 0] ** 2

    return CostSpec(running, terminal)


def lq_params(inst: LqInstance, samples: int) -> PathIntegralParams:
    return PathIntegralParams(
        s_hat=inst.s_hat, alpha=inst.alpha, samples=samples,
        dt=inst.dt, horizon=inst.horizon)


def lq_estimate(inst: LqInstance, x0: float, samples: int, seed,
                t0: float = 0.0, workers: int = 1) -> float:
    """One sampled control estimate on the benchmark instance."""
    est, _ = pi_controller_step(
        lq_effective(inst), np.array([x0]), t0,
        lq_params(inst, samples), lq_cost(inst), seed, workers)
    return float(est.control[0])


def lq_benchmark(inst: LqInstance, states, sample_counts, n_seeds: int,
                 base_seed: int = 0, workers: int = 1) -> dict:
    """Mean estimates across seeds versus the Riccati feedback.

    Returns a dict with the oracle values, per-(M, state) seed-mean
    estimates, and the mean absolute error per sample count. Seeds are
    base_seed + i so runs are reproducible.
    """
    states = [float(x) for x in states]
    oracle = np.array([lq_optimal_control(inst, x) for x in states])
    eff = lq_effective(inst)
    cost = lq_cost(inst)
    means = {}
    errors = {}
    for m in sample_counts:
        params = lq_params(inst, m)
        est = np.zeros((len(states), n_seeds))
        for i, x0 in enumerate(states):
            for s in range(n_seeds):
                e, _ = pi_controller_step(
                    eff, np.array([x0]), 0.0, params, cost,
                    (base_seed, i, s), workers)
                est[i, s] = e.control[0]
        mean = est.mean(axis=1)
        means[m] = mean
        errors[m] = float(np.mean(np.abs(mean - oracle)))
    return {"states": states, "oracle": oracle, "means": means, "errors": errors}


# ---------------------------------------------------------------------------
# Finite-difference derivative checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DerivativeErrors:
    """Relative errors of one task at one state for one step size."""

    sigma_dot: float
    sigma_ddot: float


def _rel_err(fd: np.ndarray, claim: np.ndarray) -> float:
    denom = max(float(np.max(np.abs(claim))), 1.0)
    return float(np.max(np.abs(fd - claim))) / denom


def derivative_errors(task: TaskSpec, model: DynamicsModel, x0: np.ndarray,
                      u: np.ndarray, h: float) -> DerivativeErrors:
    """Check sigma_dot and (drift, input_map) against an Euler rollout.

    Two explicit Euler steps of size h under the held control u give
    states x0, x1, x2; central differences about x1 of the task value
    and of its claimed velocity are compared against sigma_dot(x1) and
    drift(x1) + input_map(x1) @ u. Both differences inherit the Euler
    scheme's first-order error, so halving h should roughly halve them.
    """

    def rate(x):
        return model.f(x) + model.G(x) @ u

    x1 = x0 + h * rate(x0)
    x2 = x1 + h * rate(x1)
    fd_dot = (task.sigma(x2) - task.sigma(x0)) / (2.0 * h)
    err_dot = _rel_err(fd_dot, task.sigma_dot(x1))
    fd_ddot = (task.sigma_dot(x2) - task.sigma_dot(x0)) / (2.0 * h)
    claim = task.drift(x1) + task.input_map(x1) @ u
    err_ddot = _rel_err(fd_ddot, claim)
    return DerivativeErrors(err_dot, err_ddot)


def _sample_single_states(rng: np.random.Generator, n: int,
                          min_clearance: float = 0.5) -> np.ndarray:
    out = np.empty((n, 4))
    for i in range(n):
        while True:
            p = rng.uniform(-2.0, 2.0, size=2)
            if np.hypot(p[0], p[1]) >= min_clearance:
                break
        out[i] = [p[0], p[1], rng.uniform(0.5, 1.5), rng.uniform(-np.pi, np.pi)]
    return out


def _sample_pair_states(rng: np.random.Generator, n: int,
                        min_clearance: float = 0.5,
                        min_separation: float = 0.3) -> np.ndarray:
    out = np.empty((n, 8))
    for i in range(n):
        while True:
            p1 = rng.uniform(-2.0, 2.0, size=2)
            p2 = rng.uniform(-2.0, 2.0, size=2)
            if (np.hypot(*p1) >= min_clearance and np.hypot(*p2) >= min_clearance
                    and np.hypot(*(p1 - p2)) >= min_separation):
                break
        out[i, 0:2] = p1
        out[i, 4:6] = p2
        out[i, 2] = rng.uniform(0.5, 1.5)
        out[i, 6] = rng.uniform(0.5, 1.5)
        out[i, 3] = rng.uniform(-np.pi, np.pi)
        out[i, 7] = rng.uniform(-np.pi, np.pi)
    return out


def derivative_suite(n_states: int = 500, h: float = 1e-5, seed: int = 0) -> dict:
    """Run the finite-difference check for every shipped task.

    For each task, n_states random states and held controls are checked
    at step sizes h and h/2. Returns per-task maximum relative errors at
    h and the ratio of mean errors between h and h/2 (close to 2 for a
    first-order-consistent check).
    """
    rng = np.random.default_rng(seed)
    obs = ObstacleSpec(center=(0.0, 0.0), radius=0.25, activation_threshold=0.5)
    single = unicycle_model()
    pair = two_unicycle_model()
    cases = [
        (make_obstacle_task_single(obs), single, _sample_single_states),
        (make_goal_task_single((1.0, 1.0)), single, _sample_single_states),
        (make_obstacle_task_pair(obs), pair, _sample_pair_states),
        (make_centroid_task((1.0, 1.0)), pair, _sample_pair_states),
        (make_distance_task(0.5), pair, _sample_pair_states),
    ]
    results = {}
    for idx, (task, model, sampler) in enumerate(cases):
        states = sampler(rng, n_states)
        controls = rng.uniform(-1.0, 1.0, size=(n_states, model.control_dim))
        err_h = np.empty((n_states, 2))
        err_h2 = np.empty((n_states, 2))
        for i in range(n_states):
            e1 = derivative_errors(task, model, states[i], controls[i], h)
            e2 = derivative_errors(task, model, states[i], controls[i], h / 2)
            err_h[i] = (e1.sigma_dot, e1.sigma_ddot)
            err_h2[i] = (e2.sigma_dot, e2.sigma_ddot)
        mean_h = err_h.mean(axis=0)
        mean_h2 = err_h2.mean(axis=0)
        key = f"{idx + 1}_{task.name}_{model.state_dim}"
        results[key] = {
            "max_err_sigma_dot": float(err_h[:, 0].max()),
            "max_err_sigma_ddot": float(err_h[:, 1].max()),
            "mean_err_sigma_dot": float(mean_h[0]),
            "mean_err_sigma_ddot": float(mean_h[1]),
            "mean_err_sigma_dot_half": float(mean_h2[0]),
            "mean_err_sigma_ddot_half": float(mean_h2[1]),
            "ratio_sigma_dot": float(mean_h[0] / mean_h2[0]),
            "ratio_sigma_ddot": float(mean_h[1] / mean_h2[1]),
        }
    return results
