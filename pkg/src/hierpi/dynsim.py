"""Control-affine dynamics models and integrators.

Ships the single- and two-unicycle models plus the effective dynamics
used by the path-integral controller: the plant with every non-sampled
task's projected PD control folded into the drift and the sampled task's
projected input map as the control channel.

All stepping is explicit Euler (Euler-Maruyama for the stochastic case)
so that the discrete-time sampler semantics match the control estimator
exactly; no higher-order schemes are offered.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonFiniteError
from .tasklib import TaskHierarchy


@dataclass(frozen=True)
class DynamicsModel:
    """Control-affine system x_dot = f(x) + G(x) u.

    noise_rows lists the state coordinates that control (and control
    noise) drives directly; every other row of G is identically zero.
    f and G are vectorized over leading batch dimensions.
    """

    state_dim: int
    control_dim: int
    f: Callable[[np.ndarray], np.ndarray]
    G: Callable[[np.ndarray], np.ndarray]
    noise_rows: tuple[int, ...]


def _unicycle_f(x: np.ndarray) -> np.ndarray:
    s, th = x[..., 2], x[..., 3]
    zero = np.zeros_like(s)
    return np.stack([s * np.cos(th), s * np.sin(th), zero, zero], axis=-1)


_UNI_G = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def unicycle_model() -> DynamicsModel:
    """Single unicycle: state (px, py, s, theta), control (a, omega)."""

    def G(x):
        return np.broadcast_to(_UNI_G, np.shape(x)[:-1] + (4, 2))

    return DynamicsModel(4, 2, _unicycle_f, G, (2, 3))


_TWO_G = np.zeros((8, 4))
_TWO_G[2, 0] = _TWO_G[3, 1] = _TWO_G[6, 2] = _TWO_G[7, 3] = 1.0


def two_unicycle_model() -> DynamicsModel:
    """Two unicycles side by side: state and control blocks concatenated."""

    def f(x):
        return np.concatenate(
            [_unicycle_f(x[..., 0:4]), _unicycle_f(x[..., 4:8])], axis=-1)

    def G(x):
        return np.broadcast_to(_TWO_G, np.shape(x)[:-1] + (8, 4))

    return DynamicsModel(8, 4, f, G, (2, 3, 6, 7))


def _require_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return x


def step_deterministic(model: DynamicsModel, x, u, dt: float) -> np.ndarray:
    """One explicit Euler step x + (f(x) + G(x) u) dt."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    drive = np.einsum("...ij,...j->...i", model.G(x), u)
    out = x + (model.f(x) + drive) * dt
    return _require_finite(out, "state after deterministic step")


@dataclass(frozen=True)
class EffectiveDynamics:
    """Plant as seen by the path-integral controller.

    drift_tilde(x, t) = f(x) + G(x) @ u_background(x, t) re-evaluates the
    other tasks' PD laws and projectors at the queried state, so rollouts
    close the loop around those tasks rather than replaying controls
    frozen at the rollout start. input_tilde(x) = G(x) @ channel(x) is
    the projected control/noise channel of the sampled task.
    """

    model: DynamicsModel
    hierarchy: TaskHierarchy
    pi_index: int

    def terms(self, x, t: float):
        """(drift_tilde, input_tilde) evaluated together, batched."""
        x = np.asarray(x, dtype=float)
        u_bg, channel = self.hierarchy.background_and_channel(x, t)
        G = self.model.G(x)
        drift = self.model.f(x) + np.einsum("...ij,...j->...i", G, u_bg)
        return drift, G @ channel

    def drift_tilde(self, x, t: float) -> np.ndarray:
        return self.terms(x, t)[0]

    def input_tilde(self, x, t: float = 0.0) -> np.ndarray:
        return self.terms(x, t)[1]

    def noise_block(self, x, t: float = 0.0) -> np.ndarray:
        """Rows of input_tilde that noise drives directly (..., n2, p)."""
        g_t = self.input_tilde(x, t)
        return g_t[..., self.model.noise_rows, :]


def effective_dynamics(model: DynamicsModel, hierarchy: TaskHierarchy,
                       k: int | None = None) -> EffectiveDynamics:
    """Bind a hierarchy to a model, sampling channel on level k.

    k defaults to the hierarchy's path-integral level and must match it
    when given.
    """
    if hierarchy.pi_index is None:
        raise ValueError("hierarchy assigns no level to the path-integral controller")
    if k is not None and k != hierarchy.pi_index:
        raise ValueError(
            f"requested level {k} but hierarchy marks level {hierarchy.pi_index}")
    if hierarchy.control_dim != model.control_dim:
        raise ValueError("hierarchy and model disagree on control dimension")
    return EffectiveDynamics(model, hierarchy, hierarchy.pi_index)


def step_stochastic(eff: EffectiveDynamics, x, u_tilde, s_hat: float,
                    dt: float, eps, t: float = 0.0) -> np.ndarray:
    """One Euler-Maruyama step of the perturbed effective dynamics.

    x' = x + drift_tilde dt + input_tilde (u_tilde dt + s_hat eps sqrt(dt)).
    eps is the caller's standard-normal draw, shape (..., p); passing it
    in keeps stepping a pure function.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if s_hat < 0:
        raise ValueError("s_hat must be nonnegative")
    x = np.asarray(x, dtype=float)
    u_tilde = np.asarray(u_tilde, dtype=float)
    eps = np.asarray(eps, dtype=float)
    drift, g_t = eff.terms(x, t)
    drive = u_tilde * dt + (s_hat * np.sqrt(dt)) * eps
    out = x + drift * dt + np.einsum("...ij,...j->...i", g_t, drive)
    return _require_finite(out, "state after stochastic step")
