"""Constrained slice-sampling primitives.

Univariate stepping-out/shrinkage plus hit-and-run directional moves with
covariance-scaled widths. Every move targets a density restricted by a hard
constraint indicator: a point is acceptable iff its log-density beats the
slice level AND the constraint holds. The constraint callable is evaluated
only after the (cheap) density test passes, so likelihood work is counted
exactly once per constraint evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .util import BufferedRNG

MAX_STEPOUT = 10
MAX_SHRINK = 100


@dataclass
class SliceTarget:
    """What a slice move needs: log-density, hard constraint, initial width."""

    logf: Callable[[float], float]
    constraint: Callable[[float], bool]
    width0: float


@dataclass
class SliceStats:
    """Mutable counters shared across moves (stall = shrinkage gave up)."""

    stalls: int = 0


def _slice_1d(
    x0: float,
    logf,
    constraint,
    width: float,
    buf: BufferedRNG,
    stats: SliceStats,
    max_stepout: int = MAX_STEPOUT,
    max_shrink: int = MAX_SHRINK,
) -> tuple[float, bool]:
    """One stepping-out/shrinkage slice update of a scalar coordinate.

    Assumes constraint(x0) holds and logf(x0) is finite. Returns
    (new point, moved). On shrinkage exhaustion the start point is returned
    unchanged and the stall counter is bumped; the caller's caches stay valid
    because the state did not move.
    """
    f0 = logf(x0)
    # log(1-u) with u in [0,1) avoids log(0); 1-u is uniform on (0,1].
    level = f0 + math.log(1.0 - buf.uniform())
    r = buf.uniform()
    left = x0 - r * width
    right = x0 + (1.0 - r) * width
    n = max_stepout
    while n > 0 and logf(left) > level and constraint(left):
        left -= width
        n -= 1
    n = max_stepout
    while n > 0 and logf(right) > level and constraint(right):
        right += width
        n -= 1
    for _ in range(max_shrink):
        x1 = left + buf.uniform() * (right - left)
        if logf(x1) > level and constraint(x1):
            return x1, True
        if x1 < x0:
            left = x1
        else:
            right = x1
    stats.stalls += 1
    return x0, False


def slice_axis(
    x0: float,
    target: SliceTarget,
    rng: np.random.Generator | BufferedRNG,
    stats: SliceStats | None = None,
    max_stepout: int = MAX_STEPOUT,
    max_shrink: int = MAX_SHRINK,
) -> float:
    """Univariate constrained slice update; see `_slice_1d` for semantics."""
    buf = rng if isinstance(rng, BufferedRNG) else BufferedRNG(rng)
    stats = stats if stats is not None else SliceStats()
    x1, _ = _slice_1d(
        x0, target.logf, target.constraint, target.width0, buf, stats, max_stepout, max_shrink
    )
    return x1


def slice_direction(
    x0: np.ndarray,
    direction: np.ndarray,
    target: SliceTarget,
    rng: np.random.Generator | BufferedRNG,
    stats: SliceStats | None = None,
    max_stepout: int = MAX_STEPOUT,
    max_shrink: int = MAX_SHRINK,
) -> np.ndarray:
    """Hit-and-run move along `x0 + t * direction`.

    The direction's norm carries the covariance scale, so the line is slice
    sampled in t with unit initial width. `target.logf`/`target.constraint`
    take full block vectors.
    """
    buf = rng if isinstance(rng, BufferedRNG) else BufferedRNG(rng)
    stats = stats if stats is not None else SliceStats()

    def logf_t(t: float) -> float:
        return target.logf(x0 + t * direction)

    def constraint_t(t: float) -> bool:
        return target.constraint(x0 + t * direction)

    t1, moved = _slice_1d(0.0, logf_t, constraint_t, 1.0, buf, stats, max_stepout, max_shrink)
    if not moved:
        return x0.copy()
    return x0 + t1 * direction


def draw_direction(chol: np.ndarray, rng: np.random.Generator | BufferedRNG) -> np.ndarray:
    """Covariance-shaped random direction: L @ (z / ||z||), z standard normal.

    The returned norm is the 1-sigma length of the covariance along that
    random direction, which becomes the initial slice width.
    """
    gen = rng.gen if isinstance(rng, BufferedRNG) else rng
    d = chol.shape[0]
    z = gen.standard_normal(d)
    nrm = math.sqrt(float(z @ z))
    if nrm == 0.0:  # probability-zero; redraw once is enough in practice
        z = gen.standard_normal(d)
        nrm = math.sqrt(float(z @ z))
    return chol @ (z / nrm)


@dataclass
class BlockCovariance:
    """Block-diagonal live-set covariance snapshot with Cholesky factors.

    One block for the hyperparameters plus either a single pooled local block
    (shared by all groups) or one block per group. Cross-block covariance is
    identically zero by construction.
    """

    psi_block: np.ndarray | None
    local_blocks: np.ndarray  # (d_theta, d_theta) pooled, else (J, d_theta, d_theta)
    pooled: bool
    jitter_psi: float = 0.0
    jitter_local: float = 0.0
    psi_chol: np.ndarray | None = field(default=None, repr=False)
    local_chols: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.psi_block is not None and self.psi_chol is None:
            self.psi_chol = _checked_cholesky(self.psi_block, "psi")
        if self.local_chols is None:
            if self.pooled:
                self.local_chols = _checked_cholesky(self.local_blocks, "local")
            else:
                self.local_chols = np.stack(
                    [_checked_cholesky(b, f"local[{j}]") for j, b in enumerate(self.local_blocks)]
                )

    def local_chol(self, j: int) -> np.ndarray:
        return self.local_chols if self.pooled else self.local_chols[j]

    def local_block(self, j: int) -> np.ndarray:
        return self.local_blocks if self.pooled else self.local_blocks[j]

    @property
    def psi_sigma(self) -> float:
        """Scalar width for 1-d hyperparameter blocks."""
        return float(self.psi_chol[0, 0])

    def local_sigma(self, j: int) -> float:
        """Scalar width for 1-d local blocks."""
        return float(self.local_chol(j)[0, 0])

    def joint_direction(self, d_psi: int, J: int, d_theta: int, rng) -> np.ndarray:
        """Direction for a joint-space move: blockwise L applied to a unit normal."""
        gen = rng.gen if isinstance(rng, BufferedRNG) else rng
        d = d_psi + J * d_theta
        z = gen.standard_normal(d)
        z /= math.sqrt(float(z @ z))
        out = np.empty(d)
        if d_psi:
            out[:d_psi] = self.psi_chol @ z[:d_psi]
        tail = z[d_psi:].reshape(J, d_theta)
        if self.pooled:
            out[d_psi:] = (tail @ self.local_chols.T).ravel()
        else:
            out[d_psi:] = np.einsum("jab,jb->ja", self.local_chols, tail).ravel()
        return out


def _checked_cholesky(block: np.ndarray, label: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(block)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"covariance block {label} not positive-definite after jitter"
        ) from exc


def _jitter_amount(block: np.ndarray) -> float:
    # Scale-aware PD repair: 1e-8 * mean diagonal, floored at 1e-12.
    dim = block.shape[0]
    return max(1e-8 * float(np.trace(block)) / dim, 1e-12)


def estimate_block_cov(
    psis: np.ndarray | None,
    thetas: np.ndarray,
    pool_local: bool | None = None,
) -> BlockCovariance:
    """Sample covariance of the live cloud, block by block.

    `psis` is (m, d_psi) or None when d_psi = 0; `thetas` is (m, J, d_theta).
    Local blocks are pooled (group-centred covariance averaged over groups)
    by default for d_theta <= 2, where m points per group make noisy
    per-group estimates.
    """
    m, J, d_theta = thetas.shape
    if m < 2:
        raise ValueError("need at least 2 particles for a covariance estimate")
    if pool_local is None:
        pool_local = d_theta <= 2

    psi_block = None
    if psis is not None and psis.shape[1] > 0:
        centred = psis - psis.mean(axis=0)
        psi_block = (centred.T @ centred) / (m - 1)
        psi_block = np.atleast_2d(psi_block)
        psi_block[np.diag_indices_from(psi_block)] += _jitter_amount(psi_block)

    centred = thetas - thetas.mean(axis=0, keepdims=True)
    if pool_local:
        flat = centred.reshape(m * J, d_theta)
        local = (flat.T @ flat) / (m * J - 1)
        local = np.atleast_2d(local)
        local[np.diag_indices_from(local)] += _jitter_amount(local)
    else:
        local = np.einsum("mja,mjb->jab", centred, centred) / (m - 1)
        for j in range(J):
            local[j][np.diag_indices(d_theta)] += _jitter_amount(local[j])

    return BlockCovariance(psi_block=psi_block, local_blocks=local, pooled=pool_local)
