"""Task-priority linear algebra: pseudo-inverses, null-space projectors,
hierarchy composition and DOF capacity accounting.

All functions are pure; inputs are never mutated. Matrices are dense
float64 and small (control hierarchies of at most a few levels), so no
sparse or structured paths exist.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, RankDeficientError

# Relative rank cutoff: singular values at or below RANK_RTOL * sigma_max
# are treated as zero.
RANK_RTOL = 1e-8


def _as_matrix(J) -> np.ndarray:
    J = np.asarray(J, dtype=float)
    if J.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D matrix, got shape {J.shape}")
    return J


def right_pseudoinverse(J, tol: float | None = None) -> np.ndarray:
    """Minimal-norm right inverse of a full-row-rank matrix.

    Computed by SVD. For an m x n matrix J with m <= n and full row rank
    this equals J^T (J J^T)^-1: the unique right inverse of smallest
    Frobenius norm, so J^+ y is the minimum-norm solution of J v = y.

    Args:
        J: m x n matrix, m <= n.
        tol: absolute singular-value cutoff. Defaults to
            RANK_RTOL * sigma_max.

    Returns:
        n x m matrix X with J @ X = I_m.

    Raises:
        RankDeficientError: smallest singular value of J is <= tol.
        DimensionMismatchError: m > n or J is not a matrix.
    """
    J = _as_matrix(J)
    m, n = J.shape
    if m > n:
        raise DimensionMismatchError(f"need m <= n, got {m}x{n}")
    if m == 0:
        return np.zeros((n, 0))
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    cutoff = RANK_RTOL * s[0] if tol is None else tol
    if s[-1] <= cutoff:
        raise RankDeficientError(s[-1], f"{m}x{n} matrix")
    return (Vt.T / s) @ U.T


def nullspace_projector(J, tol: float | None = None) -> np.ndarray:
    """Orthogonal projector onto the null space of J (I - J^+ J).

    Unlike :func:`right_pseudoinverse` this never raises on rank loss:
    singular values at or below the cutoff are truncated, so the result
    is always the projector onto the numerical null space. Needed for
    capacity accounting of conflicting (dependent) task sets.
    """
    J = _as_matrix(J)
    n = J.shape[1]
    if J.shape[0] == 0:
        return np.eye(n)
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    cutoff = RANK_RTOL * s[0] if tol is None else tol
    r = int(np.sum(s > cutoff))
    V1 = Vt[:r]  # orthonormal basis of the row space
    return np.eye(n) - V1.T @ V1


@dataclass(frozen=True)
class TaskJacobianSet:
    """Priority-ordered task Jacobians over one configuration space.

    jacobians[0] is the top-priority task. Every Jacobian must be fat
    (m_k <= n) and numerically full row rank.
    """

    jacobians: tuple[np.ndarray, ...]
    n: int

    def __init__(self, jacobians, n: int | None = None, tol: float | None = None):
        mats = tuple(_as_matrix(J) for J in jacobians)
        if not mats:
            raise DimensionMismatchError("need at least one Jacobian")
        if n is None:
            n = mats[0].shape[1]
        for k, J in enumerate(mats):
            m_k, n_k = J.shape
            if n_k != n:
                raise DimensionMismatchError(
                    f"Jacobian {k} has {n_k} columns, expected {n}")
            if m_k > n:
                raise DimensionMismatchError(
                    f"Jacobian {k} is {m_k}x{n}, needs m <= n")
            s = np.linalg.svd(J, compute_uv=False)
            cutoff = RANK_RTOL * s[0] if tol is None else tol
            if s[-1] <= cutoff:
                raise RankDeficientError(s[-1], f"Jacobian {k}")
        object.__setattr__(self, "jacobians", mats)
        object.__setattr__(self, "n", int(n))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(J.shape[0] for J in self.jacobians)


@dataclass(frozen=True)
class ProjectorChain:
    """Null-space projectors for a task hierarchy.

    projectors[k] maps a control vector into the subspace that leaves
    tasks 1..k untouched; projectors[0] is the identity. residual_dims[k]
    is the dimension of the space still available below level k+1.
    """

    projectors: tuple[np.ndarray, ...]
    residual_dims: tuple[int, ...] = field(default=())


def projector_chain(tasks: TaskJacobianSet, tol: float | None = None) -> ProjectorChain:
    """Build the hierarchy's null-space projectors.

    Level k's projector is the orthogonal projector onto the common null
    space of all higher-priority Jacobians (computed from their stacked
    matrix), which makes every projector idempotent and annihilated by
    each Jacobian above it. The plain product recursion
    N_k = N_{k-1}(I - J^+ J) agrees with this for K <= 2 but loses both
    properties from the third level on, so it is not used here.

    Returns:
        ProjectorChain with K+1 projectors (N_1 = I first; the last one
        is the space left below the whole hierarchy) and K residual
        dimensions, residual_dims[k] = rank of the projector remaining
        after level k+1.
    """
    n = tasks.n
    projectors = [np.eye(n)]
    residual = []
    stack_rows: list[np.ndarray] = []
    for J in tasks.jacobians:
        stack_rows.append(J)
        N = nullspace_projector(np.vstack(stack_rows), tol)
        projectors.append(N)
        residual.append(int(round(np.trace(N))))  # trace of an orthogonal projector = rank
    return ProjectorChain(tuple(projectors), tuple(residual))


def compose_flat(controls, chain: ProjectorChain) -> np.ndarray:
    """Sum of per-task controls, each projected by its level: u = sum N_k u_k.

    Pairs controls[k] with projectors[k]; a chain built by
    :func:`projector_chain` carries one trailing projector more than
    there are tasks, which is ignored here.
    """
    if len(controls) not in (len(chain.projectors), len(chain.projectors) - 1):
        raise DimensionMismatchError(
            f"{len(controls)} controls for {len(chain.projectors)} projectors")
    u = None
    for u_k, N_k in zip(controls, chain.projectors):
        u_k = np.asarray(u_k, dtype=float)
        if u_k.shape != (N_k.shape[1],):
            raise DimensionMismatchError(
                f"control shape {u_k.shape} vs projector {N_k.shape}")
        term = N_k @ u_k
        u = term if u is None else u + term
    return u


def compose_nested(controls, input_maps) -> np.ndarray:
    """Nested-projection composition u = u_1 + (I - L_1^+ L_1)(u_2 + ...).

    Folds from the lowest-priority control outward; each level's input
    map L_k projects everything below it into L_k's null space. The last
    task needs no map, so input_maps may have one entry fewer than
    controls (a trailing map, if given, is ignored). A task deactivated
    for the current step is represented by a 0-row map (projector = I)
    with a zero control, or simply dropped from both lists.
    """
    controls = [np.asarray(u, dtype=float) for u in controls]
    if not controls:
        raise DimensionMismatchError("no controls to compose")
    p = controls[0].shape[0]
    for u_k in controls:
        if u_k.shape != (p,):
            raise DimensionMismatchError("controls must share one dimension")
    if len(input_maps) == len(controls):
        input_maps = input_maps[:-1]
    if len(input_maps) != len(controls) - 1:
        raise DimensionMismatchError(
            f"{len(controls)} controls need {len(controls) - 1} input maps, "
            f"got {len(input_maps)}")
    u = controls[-1]
    for u_k, L_k in zip(reversed(controls[:-1]), reversed(list(input_maps))):
        L_k = _as_matrix(L_k)
        if L_k.shape[1] != p:
            raise DimensionMismatchError(
                f"input map has {L_k.shape[1]} columns, controls have {p}")
        P = np.eye(p) - right_pseudoinverse(L_k) @ L_k
        u = u_k + P @ u
    return u


def capacity_report(tasks: TaskJacobianSet, tol: float | None = None):
    """Degree-of-freedom budget per hierarchy level.

    Returns a list of (level, consumed_dofs, remaining_dofs) tuples,
    level counting from 1. consumed_dofs is the rank actually absorbed
    by the task given everything above it (less than the task dimension
    when tasks conflict); once remaining_dofs hits 0 every lower level
    is projected onto an empty space and contributes nothing.
    """
    n = tasks.n
    report = []
    prev_rank = n
    stack_rows: list[np.ndarray] = []
    for k, J in enumerate(tasks.jacobians, start=1):
        stack_rows.append(J)
        N = nullspace_projector(np.vstack(stack_rows), tol)
        rank = int(round(np.trace(N)))
        report.append((k, prev_rank - rank, rank))
        prev_rank = rank
    return report
