"""Monte-Carlo path-integral controller.

The optimal control of the sampled task is estimated at each step from M
rollouts of the uncontrolled effective dynamics: each rollout's
state-dependent cost-to-go S is turned into an importance weight
exp(-(S - S_min) / lambda) (the shift cancels in the ratio and prevents
underflow), and the weighted average of the first-step noise draws is
mapped back through the noise channel.

Sampling is deterministic under any worker count: sample j draws from a
counter-based stream keyed by the seed with counter block j, and all
reductions run in sample-index order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.random import Generator, Philox

from .dynsim import EffectiveDynamics, step_stochastic
from .errors import DegenerateWeightsError, NonFiniteError
from .hiercore import RANK_RTOL


@dataclass(frozen=True)
class PathIntegralParams:
    """Sampler configuration.

    The temperature lam is never stored: it is recomputed as
    alpha * s_hat**2, so the transform constant and the noise scale can
    not drift apart.
    """

    s_hat: float
    alpha: float
    samples: int
    dt: float
    horizon: float
    running_weight: float | None = None
    horizon_cap: float | None = None
    min_ess: float = 2.0

    def __post_init__(self):
        if not self.s_hat > 0:
            raise ValueError("s_hat must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.samples >= 1:
            raise ValueError("need at least one sample")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.horizon_cap is not None and not self.horizon_cap > 0:
            raise ValueError("horizon_cap must be positive when given")
        if not 1.0 <= self.min_ess:
            raise ValueError("min_ess must not be below 1")

    @property
    def lam(self) -> float:
        return self.alpha * self.s_hat ** 2


@dataclass(frozen=True)
class CostSpec:
    """State-dependent running and terminal cost.

    Both callables are vectorized over leading batch dimensions and must
    be nonnegative on finite states. The quadratic control cost is fixed
    by alpha and never user-supplied.
    """

    running: Callable[[np.ndarray], np.ndarray]
    terminal: Callable[[np.ndarray], np.ndarray]


@dataclass
class RolloutResult:
    """Cost-to-go and first-step noise of one rollout."""

    cost_to_go: float
    first_noise: np.ndarray
    weight: float | None = None


class RolloutBatch(Sequence):
    """Sequence of RolloutResult backed by flat arrays.

    Behaves like the list of per-sample results but keeps the costs and
    first-step draws as contiguous arrays so the estimator does not pay
    per-sample Python overhead at large M.
    """

    def __init__(self, costs: np.ndarray, first_noise: np.ndarray):
        self.costs = costs
        self.first_noise = first_noise
        self.weights: np.ndarray | None = None

    def __len__(self) -> int:
        return self.costs.shape[0]

    def __getitem__(self, j):
        if isinstance(j, slice):
            return [self[i] for i in range(*j.indices(len(self)))]
        w = None if self.weights is None else float(self.weights[j])
        return RolloutResult(float(self.costs[j]), self.first_noise[j], w)


@dataclass(frozen=True)
class ControlEstimate:
    """Estimator output: control, mean weight and effective sample size."""

    control: np.ndarray
    normalizer: float
    ess: float


@dataclass(frozen=True)
class StepDiagnostics:
    """Per-control-step sampler health record for the trajectory log."""

    t: float
    ess: float
    s_min: float
    s_mean: float
    weight_entropy: float
    control_norm: float
    normalizer: float


def cost_to_go(traj, cost: CostSpec, dt: float) -> float:
    """Left-Riemann running cost over a trajectory plus terminal cost.

    traj holds the visited states, shape (steps + 1, state_dim); the
    running cost is accumulated at every state except the last.
    """
    traj = np.asarray(traj, dtype=float)
    if traj.ndim == 1:
        traj = traj[None, :]
    if traj.shape[0] == 0:
        raise ValueError("trajectory is empty")
    s = float(cost.terminal(traj[-1]))
    if traj.shape[0] > 1:
        s += float(np.sum(cost.running(traj[:-1]))) * dt
    if not math.isfinite(s):
        raise NonFiniteError("cost-to-go is not finite")
    return s


def _philox_key(seed) -> np.ndarray:
    """Map a seed (int or tuple of ints) to a 128-bit Philox key."""
    return np.random.SeedSequence(seed).generate_state(2, np.uint64)


def _per_sample_normals(key: np.ndarray, lo: int, hi: int, shape) -> np.ndarray:
    """Standard normals for samples lo..hi-1, one counter stream each.

    Sample j draws from Philox(key, counter = j << 128); the bit
    generator is reused and re-seated per sample, which is bitwise
    identical to constructing it fresh and considerably cheaper.
    """
    bg = Philox(key=key)
    gen = Generator(bg)
    state = bg.state
    counter = state["state"]["counter"]
    out = np.empty((hi - lo,) + tuple(shape))
    for j in range(lo, hi):
        counter[:] = 0
        counter[2] = j
        state["buffer_pos"] = 4
        state["has_uint32"] = 0
        bg.state = state
        out[j - lo] = gen.standard_normal(shape)
    return out


def rollout_horizon_steps(params: PathIntegralParams, t0: float) -> int:
    """Number of Euler substeps from t0 to the (possibly capped) horizon."""
    end = params.horizon
    if params.horizon_cap is not None:
        end = min(end, t0 + params.horizon_cap)
    return max(1, int(round((end - t0) / params.dt)))


def sample_rollouts(eff: EffectiveDynamics, x0, t0: float,
                    params: PathIntegralParams, cost: CostSpec, seed,
                    workers: int = 1) -> RolloutBatch:
    """Roll out the uncontrolled effective dynamics M times.

    Each sample integrates Euler-Maruyama steps with u_tilde = 0 from t0
    to the horizon, accumulating the left-Riemann running cost and the
    terminal cost. Results are a pure function of (inputs, seed): sample
    j's noise comes from a counter stream derived from (seed, j), and
    chunking over workers only splits the batch, so any worker count
    produces bit-identical costs.
    """
    if not t0 < params.horizon:
        raise ValueError(f"t0={t0} must precede the horizon {params.horizon}")
    x0 = np.asarray(x0, dtype=float)
    m = params.samples
    tau = rollout_horizon_steps(params, t0)
    p = eff.model.control_dim
    key = _philox_key(seed)
    costs = np.empty(m)
    first = np.empty((m, p))
    workers = max(1, min(int(workers), m))
    bounds = [(m * w) // workers for w in range(workers + 1)]
    chunks = [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]

    def run_chunk(lo: int, hi: int) -> None:
        eps = _per_sample_normals(key, lo, hi, (tau, p))
        x = np.broadcast_to(x0, (hi - lo,) + x0.shape).copy()
        s_acc = np.zeros(hi - lo)
        zero_u = np.zeros(p)
        for i in range(tau):
            s_acc += cost.running(x) * params.dt
            try:
                x = step_stochastic(eff, x, zero_u, params.s_hat, params.dt,
                                    eps[:, i, :], t0 + i * params.dt)
            except NonFiniteError as exc:
                raise NonFiniteError(
                    f"rollout diverged at substep {i} (t={t0 + i * params.dt:.4f}), "
                    f"samples {lo}..{hi - 1}") from exc
        s_acc += cost.terminal(x)
        costs[lo:hi] = s_acc
        first[lo:hi] = eps[:, 0, :]

    if len(chunks) == 1:
        run_chunk(*chunks[0])
    else:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            for fut in [pool.submit(run_chunk, lo, hi) for lo, hi in chunks]:
                fut.result()
    if not np.all(np.isfinite(costs)):
        raise NonFiniteError("rollout batch produced non-finite costs")
    return RolloutBatch(costs, first)


def _batch_arrays(rollouts) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(rollouts, RolloutBatch):
        return rollouts.costs, rollouts.first_noise
    costs = np.array([r.cost_to_go for r in rollouts], dtype=float)
    first = np.array([r.first_noise for r in rollouts], dtype=float)
    return costs, first


def estimate_control(rollouts, eff: EffectiveDynamics, x0,
                     params: PathIntegralParams, t: float = 0.0) -> ControlEstimate:
    """Importance-weighted control estimate from a rollout batch.

    u = calG(x0) (sum_j w_j s_hat G2 eps0_j) / (sum_j w_j sqrt(dt)) with
    w_j = exp(-(S_j - min S) / lam) and calG the minimal-norm inverse of
    the noise-driven channel block G2. Subtracting min S leaves the
    ratio unchanged and keeps the largest weight at exactly 1, so the
    normalizer can never underflow; weight collapse is instead reported
    as DegenerateWeightsError when the effective sample size drops
    below 2 (single dominating sample).

    The channel block is inverted by rank-truncated pseudo-inverse: when
    higher-priority tasks are active the projected block is singular by
    construction, and the estimate then lives in the subspace the
    hierarchy leaves available. A numerically zero block yields a zero
    control with a warning.
    """
    costs, first = _batch_arrays(rollouts)
    m = costs.shape[0]
    if m < 1:
        raise ValueError("need at least one rollout")
    if not np.all(np.isfinite(costs)):
        raise NonFiniteError("rollout costs contain NaN or Inf")
    lam = params.lam
    s_min = float(costs.min())
    w = np.exp(-(costs - s_min) / lam)
    sum_w = float(np.sum(w))
    ess = sum_w  # max weight is exactly 1 after the shift
    if isinstance(rollouts, RolloutBatch):
        rollouts.weights = w
    else:
        for r, wj in zip(rollouts, w):
            r.weight = float(wj)
    # Weight-collapse guard. min_ess = 1 disables it: regimes whose cost
    # spread is intentionally much larger than the temperature (strongly
    # selective weighting) run with near-unit ESS by design.
    if m >= 2 and ess < params.min_ess:
        raise DegenerateWeightsError(
            f"effective sample size {ess:.3f} < {params.min_ess} at "
            f"lam={lam:.3e}; temperature too small for the cost spread")
    g2 = eff.noise_block(np.asarray(x0, dtype=float), t)
    u_mat, s_vals, vt = np.linalg.svd(g2, full_matrices=False)
    p = eff.model.control_dim
    if s_vals.size == 0 or s_vals[0] <= 0.0:
        warnings.warn("path-integral channel is zero; controller is inert",
                      RuntimeWarning, stacklevel=2)
        return ControlEstimate(np.zeros(p), sum_w / m, ess)
    rank = int(np.sum(s_vals > RANK_RTOL * s_vals[0]))
    if rank == 0:
        warnings.warn("path-integral channel is numerically zero; controller is inert",
                      RuntimeWarning, stacklevel=2)
        return ControlEstimate(np.zeros(p), sum_w / m, ess)
    cal_g = vt[:rank].T @ (u_mat[:, :rank] / s_vals[:rank]).T
    weighted_eps = np.einsum("j,jp->p", w, first)
    u = cal_g @ (g2 @ weighted_eps) * (params.s_hat / (sum_w * np.sqrt(params.dt)))
    if not np.all(np.isfinite(u)):
        raise NonFiniteError("control estimate is not finite")
    return ControlEstimate(u, sum_w / m, ess)


def pi_controller_step(eff: EffectiveDynamics, x, t: float,
                       params: PathIntegralParams, cost: CostSpec, seed,
                       workers: int = 1) -> tuple[ControlEstimate, StepDiagnostics]:
    """One full controller evaluation: sample, weight, estimate, report."""
    rollouts = sample_rollouts(eff, x, t, params, cost, seed, workers)
    est = estimate_control(rollouts, eff, x, params, t)
    w = rollouts.weights
    pmf = w / np.sum(w)
    entropy = float(-np.sum(pmf * np.log(np.maximum(pmf, 1e-300))))
    diag = StepDiagnostics(
        t=t,
        ess=est.ess,
        s_min=float(rollouts.costs.min()),
        s_mean=float(rollouts.costs.mean()),
        weight_entropy=entropy,
        control_norm=float(np.linalg.norm(est.control)),
        normalizer=est.normalizer,
    )
    return est, diag
