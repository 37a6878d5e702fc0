"""Concrete control tasks for the unicycle scenarios.

Each task packages a scalar- or vector-valued output map sigma together
with its first derivative, the input map Lambda and drift delta of its
second derivative (sigma_ddot = delta + Lambda u), a desired trajectory,
PD gains and an activation predicate. All callables are vectorized: they
accept states of shape (..., state_dim) and return correspondingly
batched arrays, which is what keeps Monte-Carlo rollouts fast.

State conventions: a single unicycle is x = (px, py, s, theta) with
control (a, omega); two unicycles concatenate two such blocks with
control (a1, omega1, a2, omega2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    DimensionMismatchError,
    InactiveTaskError,
    RankDeficientError,
)
from .hiercore import RANK_RTOL, compose_nested, right_pseudoinverse

# Rows whose squared norm falls at or below this are treated as switched
# off inside batched evaluation (mirrors the strict path, which only
# rejects exactly singular blocks, while avoiding overflow on the rest).
_ROW_FLOOR = 1e-24


def _gain_vec(g, m: int) -> np.ndarray:
    g = np.atleast_1d(np.asarray(g, dtype=float))
    if g.size == 1:
        g = np.full(m, g.item())
    if g.shape != (m,):
        raise DimensionMismatchError(f"gain shape {g.shape} for task dim {m}")
    if np.any(g < 0):
        raise ValueError("gains must be nonnegative")
    return g


@dataclass(frozen=True)
class TaskSpec:
    """One level of a task hierarchy.

    Attributes:
        name: label used in logs and scenario files.
        dim: task dimension m.
        sigma: state -> (..., m) task value.
        sigma_dot: state -> (..., m) task velocity.
        input_map: state -> (..., m, p) matrix Lambda with
            sigma_ddot = drift + Lambda @ u.
        drift: state -> (..., m) drift delta.
        desired: time -> (sigma_d, sigma_d_dot, sigma_d_ddot), each (m,).
        kp, kd: diagonal PD gain entries, shape (m,), nonnegative.
        active_mask: state -> (..., m) boolean per-row activation;
            None means always active.
        control_dim: control dimension p.
    """

    name: str
    dim: int
    sigma: Callable[[np.ndarray], np.ndarray]
    sigma_dot: Callable[[np.ndarray], np.ndarray]
    input_map: Callable[[np.ndarray], np.ndarray]
    drift: Callable[[np.ndarray], np.ndarray]
    desired: Callable[[float], tuple[np.ndarray, np.ndarray, np.ndarray]]
    kp: np.ndarray
    kd: np.ndarray
    control_dim: int
    active_mask: Callable[[np.ndarray], np.ndarray] | None = None

    def mask(self, x: np.ndarray) -> np.ndarray:
        """Boolean activation per task row, shape (..., m)."""
        if self.active_mask is None:
            return np.ones(np.shape(x)[:-1] + (self.dim,), dtype=bool)
        return self.active_mask(x)

    def active(self, x: np.ndarray) -> bool:
        """True when at least one row of the task is active at x."""
        return bool(np.any(self.mask(x)))

    def pd_target(self, x: np.ndarray, t: float) -> np.ndarray:
        """Reference task acceleration: sdd_d + Kp err + Kd err_dot - delta."""
        sd, sd_dot, sd_ddot = self.desired(t)
        err = sd - self.sigma(x)
        err_dot = sd_dot - self.sigma_dot(x)
        return sd_ddot + self.kp * err + self.kd * err_dot - self.drift(x)


def pd_task_control(task: TaskSpec, x: np.ndarray, t: float) -> np.ndarray:
    """Closed-loop inverse-kinematics control for one task at one state.

    Solves Lambda u = sdd_d + Kp err + Kd err_dot - delta for the
    minimum-norm u over the currently active rows.

    Raises:
        InactiveTaskError: no row of the task is active at x (the caller
            must treat the task as contributing zero).
        RankDeficientError: the active block of Lambda is singular.
    """
    x = np.asarray(x, dtype=float)
    mask = task.mask(x)
    if not mask.any():
        raise InactiveTaskError(f"task '{task.name}' inactive")
    lam = task.input_map(x)[mask]
    target = task.pd_target(x, t)[mask]
    return right_pseudoinverse(lam) @ target


@dataclass(frozen=True)
class ObstacleSpec:
    """Disk obstacle with an activation shell around it."""

    center: np.ndarray
    radius: float
    activation_threshold: float

    def __init__(self, center, radius: float, activation_threshold: float | None = None):
        center = np.asarray(center, dtype=float).reshape(2)
        radius = float(radius)
        if activation_threshold is None:
            activation_threshold = 2.0 * radius
        activation_threshold = float(activation_threshold)
        if not radius > 0:
            raise ValueError("radius must be positive")
        if not activation_threshold > radius:
            raise ValueError("activation_threshold must exceed radius")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", radius)
        object.__setattr__(self, "activation_threshold", activation_threshold)


def _const_desired(value: np.ndarray):
    value = np.asarray(value, dtype=float)
    zero = np.zeros_like(value)

    def desired(t: float):
        return value, zero, zero

    return desired


def _range_rows(x, offset: int, center: np.ndarray):
    """Distance to a point and its derivative data for one agent block.

    Returns (d, d_dot, lam_a, lam_w, delta) where the range acceleration
    is d_ddot = delta + lam_a * a + lam_w * omega.
    """
    dx = x[..., offset + 0] - center[0]
    dy = x[..., offset + 1] - center[1]
    s = x[..., offset + 2]
    th = x[..., offset + 3]
    c, si = np.cos(th), np.sin(th)
    d = np.hypot(dx, dy)
    rho = dx * c + dy * si          # range component along the heading
    cross = dy * c - dx * si        # range component across the heading
    d_dot = s * rho / d
    lam_a = rho / d
    lam_w = s * cross / d
    delta = (s * cross) ** 2 / d ** 3
    return d, d_dot, lam_a, lam_w, delta


def make_obstacle_task_single(obs: ObstacleSpec, kp=4.0, kd=4.0) -> TaskSpec:
    """Keep-away task for one unicycle: sigma = distance to obstacle center.

    Desired value is the obstacle radius. Active only inside the
    activation shell and while the range rate is negative (moving toward
    the obstacle). The drift and input map are the exact second
    derivative of the distance:

        d_ddot = (s^2 cross^2) / d^3 + (rho / d) a + (s cross / d) omega

    with rho and cross the along- and across-heading components of the
    offset from the obstacle center.
    """
    c = obs.center

    def sigma(x):
        return np.hypot(x[..., 0] - c[0], x[..., 1] - c[1])[..., None]

    def sigma_dot(x):
        d, d_dot, *_ = _range_rows(x, 0, c)
        return d_dot[..., None]

    def input_map(x):
        _, _, lam_a, lam_w, _ = _range_rows(x, 0, c)
        return np.stack([lam_a, lam_w], axis=-1)[..., None, :]

    def drift(x):
        return _range_rows(x, 0, c)[4][..., None]

    def active_mask(x):
        d, d_dot, *_ = _range_rows(x, 0, c)
        return ((d < obs.activation_threshold) & (d_dot < 0.0))[..., None]

    return TaskSpec(
        name="obstacle", dim=1,
        sigma=sigma, sigma_dot=sigma_dot, input_map=input_map, drift=drift,
        desired=_const_desired([obs.radius]),
        kp=_gain_vec(kp, 1), kd=_gain_vec(kd, 1),
        control_dim=2, active_mask=active_mask,
    )


def make_goal_task_single(p_g, kp=4.0, kd=4.0) -> TaskSpec:
    """Move-to-goal task for one unicycle: sigma = position, always active.

    The input map [[cos th, -s sin th], [sin th, s cos th]] has
    determinant s, so it degenerates exactly at zero speed.
    """
    p_g = np.asarray(p_g, dtype=float).reshape(2)

    def sigma(x):
        return x[..., 0:2]

    def sigma_dot(x):
        s, th = x[..., 2], x[..., 3]
        return np.stack([s * np.cos(th), s * np.sin(th)], axis=-1)

    def input_map(x):
        s, th = x[..., 2], x[..., 3]
        c, si = np.cos(th), np.sin(th)
        row1 = np.stack([c, -s * si], axis=-1)
        row2 = np.stack([si, s * c], axis=-1)
        return np.stack([row1, row2], axis=-2)

    def drift(x):
        return np.zeros(np.shape(x)[:-1] + (2,))

    return TaskSpec(
        name="goal", dim=2,
        sigma=sigma, sigma_dot=sigma_dot, input_map=input_map, drift=drift,
        desired=_const_desired(p_g),
        kp=_gain_vec(kp, 2), kd=_gain_vec(kd, 2),
        control_dim=2,
    )


def make_obstacle_task_pair(obs: ObstacleSpec, kp=4.0, kd=4.0) -> TaskSpec:
    """Keep-away task stacked over two unicycles.

    One distance row per agent with a block-diagonal input map, so the
    pseudo-inverse decouples per agent and each agent activates
    independently (an inactive agent's row is removed from the block).
    """
    c = obs.center

    def sigma(x):
        d1 = np.hypot(x[..., 0] - c[0], x[..., 1] - c[1])
        d2 = np.hypot(x[..., 4] - c[0], x[..., 5] - c[1])
        return np.stack([d1, d2], axis=-1)

    def sigma_dot(x):
        return np.stack(
            [_range_rows(x, 0, c)[1], _range_rows(x, 4, c)[1]], axis=-1)

    def input_map(x):
        _, _, a1, w1, _ = _range_rows(x, 0, c)
        _, _, a2, w2, _ = _range_rows(x, 4, c)
        zero = np.zeros_like(a1)
        row1 = np.stack([a1, w1, zero, zero], axis=-1)
        row2 = np.stack([zero, zero, a2, w2], axis=-1)
        return np.stack([row1, row2], axis=-2)

    def drift(x):
        return np.stack(
            [_range_rows(x, 0, c)[4], _range_rows(x, 4, c)[4]], axis=-1)

    def active_mask(x):
        d1, dd1, *_ = _range_rows(x, 0, c)
        d2, dd2, *_ = _range_rows(x, 4, c)
        m1 = (d1 < obs.activation_threshold) & (dd1 < 0.0)
        m2 = (d2 < obs.activation_threshold) & (dd2 < 0.0)
        return np.stack([m1, m2], axis=-1)

    return TaskSpec(
        name="obstacle", dim=2,
        sigma=sigma, sigma_dot=sigma_dot, input_map=input_map, drift=drift,
        desired=_const_desired([obs.radius, obs.radius]),
        kp=_gain_vec(kp, 2), kd=_gain_vec(kd, 2),
        control_dim=4, active_mask=active_mask,
    )


def make_centroid_task(p_g, kp=4.0, kd=4.0) -> TaskSpec:
    """Steer the midpoint of two unicycles to a goal position."""
    p_g = np.asarray(p_g, dtype=float).reshape(2)

    def sigma(x):
        return 0.5 * (x[..., 0:2] + x[..., 4:6])

    def sigma_dot(x):
        s1, th1 = x[..., 2], x[..., 3]
        s2, th2 = x[..., 6], x[..., 7]
        vx = 0.5 * (s1 * np.cos(th1) + s2 * np.cos(th2))
        vy = 0.5 * (s1 * np.sin(th1) + s2 * np.sin(th2))
        return np.stack([vx, vy], axis=-1)

    def input_map(x):
        s1, th1 = x[..., 2], x[..., 3]
        s2, th2 = x[..., 6], x[..., 7]
        c1, si1 = np.cos(th1), np.sin(th1)
        c2, si2 = np.cos(th2), np.sin(th2)
        row1 = 0.5 * np.stack([c1, -s1 * si1, c2, -s2 * si2], axis=-1)
        row2 = 0.5 * np.stack([si1, s1 * c1, si2, s2 * c2], axis=-1)
        return np.stack([row1, row2], axis=-2)

    def drift(x):
        return np.zeros(np.shape(x)[:-1] + (2,))

    return TaskSpec(
        name="centroid", dim=2,
        sigma=sigma, sigma_dot=sigma_dot, input_map=input_map, drift=drift,
        desired=_const_desired(p_g),
        kp=_gain_vec(kp, 2), kd=_gain_vec(kd, 2),
        control_dim=4,
    )


def make_distance_task(l: float, kp=4.0, kd=4.0) -> TaskSpec:
    """Hold the inter-agent distance at l via sigma = |p1 - p2|^2 / 2.

    The desired task value is l^2 / 2. The drift collapses to
    s1^2 - 2 s1 s2 cos(th1 - th2) + s2^2 (zero for equal velocities).
    """
    l = float(l)
    if not l > 0:
        raise ValueError("spacing must be positive")

    def _parts(x):
        dx = x[..., 0] - x[..., 4]
        dy = x[..., 1] - x[..., 5]
        s1, th1 = x[..., 2], x[..., 3]
        s2, th2 = x[..., 6], x[..., 7]
        return dx, dy, s1, th1, s2, th2

    def sigma(x):
        dx, dy, *_ = _parts(x)
        return (0.5 * (dx * dx + dy * dy))[..., None]

    def sigma_dot(x):
        dx, dy, s1, th1, s2, th2 = _parts(x)
        val = dx * (s1 * np.cos(th1) - s2 * np.cos(th2)) \
            + dy * (s1 * np.sin(th1) - s2 * np.sin(th2))
        return val[..., None]

    def input_map(x):
        dx, dy, s1, th1, s2, th2 = _parts(x)
        c1, si1 = np.cos(th1), np.sin(th1)
        c2, si2 = np.cos(th2), np.sin(th2)
        row = np.stack([
            dx * c1 + dy * si1,
            s1 * (dy * c1 - dx * si1),
            -(dx * c2 + dy * si2),
            -s2 * (dy * c2 - dx * si2),
        ], axis=-1)
        return row[..., None, :]

    def drift(x):
        _, _, s1, th1, s2, th2 = _parts(x)
        val = s1 * s1 - 2.0 * s1 * s2 * np.cos(th1 - th2) + s2 * s2
        return val[..., None]

    return TaskSpec(
        name="spacing", dim=1,
        sigma=sigma, sigma_dot=sigma_dot, input_map=input_map, drift=drift,
        desired=_const_desired([0.5 * l * l]),
        kp=_gain_vec(kp, 1), kd=_gain_vec(kd, 1),
        control_dim=4,
    )


# ---------------------------------------------------------------------------
# Hierarchy evaluation
# ---------------------------------------------------------------------------

PD = "pd"
PATH_INTEGRAL = "path_integral"


@dataclass(frozen=True)
class HierarchyLevel:
    """A task plus the controller kind assigned to it.

    task may be None only for a path-integral level with nothing below
    it (the whole control space is then the sampling channel).
    """

    task: TaskSpec | None
    controller: str = PD


@dataclass
class LevelRecord:
    """Per-step diagnostics of one hierarchy level for the trajectory log."""

    name: str
    active: bool
    sigma: np.ndarray
    error: np.ndarray
    control: np.ndarray
    contribution: np.ndarray
    rank_deficient: bool = False


class TaskHierarchy:
    """Priority-ordered tasks with per-level controller assignment.

    Provides the strict single-state composition used for the realized
    plant and the vectorized background/channel evaluation used inside
    Monte-Carlo rollouts. Instances are immutable and safe to share.
    """

    def __init__(self, levels, control_dim: int | None = None):
        levels = tuple(
            lv if isinstance(lv, HierarchyLevel) else HierarchyLevel(*lv)
            for lv in levels
        )
        if not levels:
            raise DimensionMismatchError("hierarchy needs at least one level")
        pi_levels = [i for i, lv in enumerate(levels) if lv.controller == PATH_INTEGRAL]
        if len(pi_levels) > 1:
            raise ValueError("at most one level may use the path-integral controller")
        for lv in levels:
            if lv.controller not in (PD, PATH_INTEGRAL):
                raise ValueError(f"unknown controller '{lv.controller}'")
        for i, lv in enumerate(levels):
            if lv.task is None:
                if lv.controller != PATH_INTEGRAL or i != len(levels) - 1:
                    raise ValueError(
                        "a bare level (task=None) is only allowed for a "
                        "path-integral level at the bottom of the hierarchy")
        dims = {lv.task.control_dim for lv in levels if lv.task is not None}
        if control_dim is None:
            if not dims:
                raise ValueError("control_dim required when all levels are bare")
            control_dim = dims.pop()
            dims.add(control_dim)
        if dims - {control_dim}:
            raise DimensionMismatchError("levels disagree on control dimension")
        self.levels = levels
        self.control_dim = int(control_dim)
        self.pi_index = pi_levels[0] if pi_levels else None

    # -- strict single-state path (realized plant) --------------------------

    def compose(self, x, t: float, pi_control=None):
        """Compose one control step, nesting lower tasks into null spaces.

        PD levels run their closed-loop law; the path-integral level
        uses the supplied pi_control (zeros if None). Levels whose
        activation mask is empty, and levels whose active input-map block
        is singular, are dropped for this step.

        Returns:
            (u, records): composed control (p,) and one LevelRecord per
            level in priority order.
        """
        x = np.asarray(x, dtype=float)
        p = self.control_dim
        records: list[LevelRecord] = []
        active_controls: list[np.ndarray] = []
        active_maps: list[np.ndarray] = []
        active_ids: list[int] = []
        for i, lv in enumerate(self.levels):
            task = lv.task
            if task is None:
                u_k = np.zeros(p) if pi_control is None else np.asarray(pi_control, float)
                records.append(LevelRecord(
                    name="channel", active=True, sigma=np.zeros(0),
                    error=np.zeros(0), control=u_k, contribution=np.zeros(p)))
                active_controls.append(u_k)
                active_maps.append(np.zeros((0, p)))
                active_ids.append(i)
                continue
            sigma = task.sigma(x)
            err = task.desired(t)[0] - sigma
            mask = task.mask(x)
            rec = LevelRecord(
                name=task.name, active=bool(mask.any()), sigma=sigma,
                error=err, control=np.zeros(p), contribution=np.zeros(p))
            records.append(rec)
            if not rec.active:
                continue
            lam = task.input_map(x)[mask]
            try:
                lam_pinv = right_pseudoinverse(lam)
            except RankDeficientError:
                rec.active = False
                rec.rank_deficient = True
                continue
            if lv.controller == PATH_INTEGRAL:
                u_k = np.zeros(p) if pi_control is None else np.asarray(pi_control, float)
            else:
                u_k = lam_pinv @ task.pd_target(x, t)[mask]
            rec.control = u_k
            active_controls.append(u_k)
            active_maps.append(lam)
            active_ids.append(i)
        if not active_controls:
            return np.zeros(p), records
        u = compose_nested(active_controls, active_maps)
        # Per-level projected contributions (same algebra, expanded form).
        proj = np.eye(p)
        for u_k, lam, i in zip(active_controls, active_maps, active_ids):
            records[i].contribution = proj @ u_k
            if lam.shape[0]:
                proj = proj @ (np.eye(p) - right_pseudoinverse(lam) @ lam)
        return u, records

    # -- vectorized path (Monte-Carlo rollouts) ------------------------------

    def background_and_channel(self, x, t: float):
        """Drift control of the non-sampled tasks plus the sampling channel.

        For a batch of states x of shape (..., state_dim), returns
        (u_bg, channel) where u_bg (..., p) sums the projected PD
        controls of every level except the path-integral one, and
        channel (..., p, p) is the product of null-space projectors of
        all levels above the path-integral level.
        """
        if self.pi_index is None:
            raise ValueError("hierarchy has no path-integral level")
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        p = self.control_dim
        u_bg = np.zeros(batch + (p,))
        proj = np.broadcast_to(np.eye(p), batch + (p, p))
        channel = None
        last = len(self.levels) - 1
        for i, lv in enumerate(self.levels):
            if i == self.pi_index:
                channel = proj
            need_c = i != self.pi_index
            need_p = i < last
            if not (need_c or need_p):
                continue
            u_k, P = _masked_level(lv.task, x, t, need_control=need_c,
                                   need_projector=need_p)
            if need_c:
                u_bg = u_bg + np.einsum("...ij,...j->...i", proj, u_k)
            if need_p:
                proj = proj @ P
        return u_bg, channel


def _masked_level(task: TaskSpec, x, t: float, need_control: bool,
                  need_projector: bool):
    """Vectorized PD control and null-space projector for one task.

    Inactive rows are zeroed out of the input map, which makes the
    padded-Gram pseudo-inverse equal the pseudo-inverse of the active
    block. Samples whose active block is numerically singular are
    deactivated outright, matching the strict path's fallback.
    """
    batch = np.shape(x)[:-1]
    p = task.control_dim
    m = task.dim
    mask = task.mask(x)
    lam = np.where(mask[..., None], task.input_map(x), 0.0)
    diag = np.einsum("...ij,...ij->...i", lam, lam)
    mask = mask & (diag > _ROW_FLOOR)
    lam = np.where(mask[..., None], lam, 0.0)
    if m == 1:
        d0 = np.where(mask[..., 0], diag[..., 0], 1.0)
        gram_inv = np.where(mask[..., 0], 1.0 / d0, 0.0)[..., None, None]
    else:
        gram = lam @ np.swapaxes(lam, -1, -2)
        if m == 2:
            gram_inv, bad = _inv_2x2_padded(gram, mask)
            if np.any(bad):
                mask = mask & ~bad[..., None]
                lam = np.where(mask[..., None], lam, 0.0)
                gram_inv = np.where(bad[..., None, None], 0.0, gram_inv)
        else:
            gram_inv = _pinv_padded_generic(gram, mask)
    lam_t = np.swapaxes(lam, -1, -2)
    u = None
    if need_control:
        target = np.where(mask, task.pd_target(x, t), 0.0)
        u = np.einsum("...ij,...jk,...k->...i", lam_t, gram_inv, target)
    P = None
    if need_projector:
        P = np.broadcast_to(np.eye(p), batch + (p, p)) - lam_t @ gram_inv @ lam
    return u, P


def _inv_2x2_padded(gram, mask):
    """Inverse of a 2x2 Gram with inactive rows padded to identity.

    Returns (inverse, degenerate) where degenerate flags samples whose
    two active rows are numerically dependent; those must be deactivated
    by the caller.
    """
    a = gram[..., 0, 0]
    b = gram[..., 0, 1]
    d = gram[..., 1, 1]
    m0 = mask[..., 0]
    m1 = mask[..., 1]
    a_p = np.where(m0, a, 1.0)
    d_p = np.where(m1, d, 1.0)
    b_p = np.where(m0 & m1, b, 0.0)
    det = a_p * d_p - b_p * b_p
    tr = a_p + d_p
    disc = np.sqrt(np.maximum((0.5 * tr) ** 2 - det, 0.0))
    lmax = 0.5 * tr + disc
    lmin = 0.5 * tr - disc
    degenerate = (m0 & m1) & (lmin <= (RANK_RTOL ** 2) * lmax)
    safe_det = np.where(det > 0, det, 1.0)
    inv = np.empty(np.shape(gram))
    inv[..., 0, 0] = d_p / safe_det
    inv[..., 1, 1] = a_p / safe_det
    inv[..., 0, 1] = -b_p / safe_det
    inv[..., 1, 0] = -b_p / safe_det
    return inv, degenerate


def _pinv_padded_generic(gram, mask):
    """Rank-truncated inverse of a padded Gram for task dims above 2."""
    padded = gram + np.einsum(
        "...i,ij->...ij", 1.0 - mask.astype(float), np.eye(mask.shape[-1]))
    return np.linalg.pinv(padded, rcond=RANK_RTOL ** 2)
