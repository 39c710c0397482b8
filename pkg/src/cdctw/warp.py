"""Exact DTW by dynamic programming, differentiable soft-DTW, and annealing.

The DP fills a suffix table (cost-to-go from each cell to the bottom-right
corner) and extracts the optimal path with a forward walk, preferring the
diagonal step, then the x-advance, then the y-advance when costs tie.  This
makes the returned path deterministic; on an all-zero cost matrix it yields
diagonal steps first, then completion along the remaining edge.

Soft-DTW replaces the three-way minimum with a temperature-``gamma``
soft-minimum.  The gradient of the soft value with respect to every cost
entry is obtained by the standard backward recursion over the soft DP table
and forms a soft alignment matrix with entries in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from cdctw.seqcore import AlignmentPath, LoadError, SequenceView

METRICS = ("sqeuclidean", "euclidean", "l1")

# exp(x) underflows to exactly 0 well before -700; flushing avoids spurious
# divide warnings in the softmin accumulation
_EXP_FLOOR = -700.0


@dataclass(frozen=True)
class CostMatrix:
    """Pairwise frame-to-frame distances between two views."""

    values: np.ndarray
    metric: str = "sqeuclidean"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise ValueError("cost matrix must be 2-D and non-empty")
        if not np.isfinite(values).all() or (values < 0).any():
            raise ValueError("cost matrix entries must be finite and non-negative")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}, expected one of {METRICS}")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class SoftDtwConfig:
    """Soft-minimum temperature and its geometric annealing schedule."""

    gamma: float = 1.0
    anneal_factor: float = 1.0
    anneal_floor: float = 1e-4

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if not (0 < self.anneal_factor <= 1):
            raise ValueError("anneal_factor must lie in (0, 1]")
        if self.anneal_floor <= 0 or self.anneal_floor > self.gamma:
            raise ValueError("anneal_floor must be positive and <= gamma")


def pairwise_cost(x: SequenceView | np.ndarray, y: SequenceView | np.ndarray,
                  metric: str = "sqeuclidean") -> CostMatrix:
    """All pairwise frame distances between two views sharing a feature space."""
    xd = x.data if isinstance(x, SequenceView) else np.asarray(x, dtype=np.float64)
    yd = y.data if isinstance(y, SequenceView) else np.asarray(y, dtype=np.float64)
    if xd.shape[0] != yd.shape[0]:
        raise ValueError(f"feature counts differ: {xd.shape[0]} vs {yd.shape[0]}")
    if metric in ("sqeuclidean", "euclidean"):
        sq = (
            np.sum(xd * xd, axis=0)[:, None]
            + np.sum(yd * yd, axis=0)[None, :]
            - 2.0 * (xd.T @ yd)
        )
        np.maximum(sq, 0.0, out=sq)
        values = np.sqrt(sq) if metric == "euclidean" else sq
    elif metric == "l1":
        values = np.abs(xd.T[:, None, :] - yd.T[None, :, :]).sum(axis=2)
    else:
        raise ValueError(f"unknown metric {metric!r}, expected one of {METRICS}")
    return CostMatrix(values, metric=metric)


def dtw(cost: CostMatrix) -> tuple[AlignmentPath, float]:
    """Minimum-cost monotone path through the cost matrix.

    Returns the optimal path and its total cost.  Ties are resolved
    deterministically: diagonal, then x-advance, then y-advance.
    """
    c = cost.values
    nx, ny = c.shape
    suffix = np.full((nx + 1, ny + 1), np.inf)
    suffix[nx - 1, ny - 1] = c[nx - 1, ny - 1]
    for i in range(nx - 1, -1, -1):
        for j in range(ny - 1, -1, -1):
            if i == nx - 1 and j == ny - 1:
                continue
            suffix[i, j] = c[i, j] + min(
                suffix[i + 1, j + 1], suffix[i + 1, j], suffix[i, j + 1]
            )
    px = [0]
    py = [0]
    i = j = 0
    while (i, j) != (nx - 1, ny - 1):
        best = min(suffix[i + 1, j + 1], suffix[i + 1, j], suffix[i, j + 1])
        if suffix[i + 1, j + 1] == best:
            i, j = i + 1, j + 1
        elif suffix[i + 1, j] == best:
            i = i + 1
        else:
            j = j + 1
        px.append(i)
        py.append(j)
    return AlignmentPath(np.asarray(px), np.asarray(py)), float(suffix[0, 0])


def softmin(values: np.ndarray | list[float], gamma: float) -> float:
    """-gamma * log(sum(exp(-v / gamma))), max-shifted for stability.

    Infinite entries drop out; at least one entry must be finite.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    v = np.asarray(values, dtype=np.float64)
    lo = v.min()
    if not np.isfinite(lo):
        raise ValueError("softmin needs at least one finite value")
    shifted = -(v - lo) / gamma
    acc = np.exp(np.where(shifted < _EXP_FLOOR, -np.inf, shifted)).sum()
    return float(lo - gamma * np.log(acc))


def soft_dtw(cost: CostMatrix, gamma: float) -> tuple[float, np.ndarray]:
    """Soft-DTW value and its gradient with respect to every cost entry.

    Forward pass: ``R[i, j] = cost[i, j] + softmin(R[i-1, j-1], R[i-1, j],
    R[i, j-1])`` over a border of +inf with R[0, 0] anchored at zero (1-based
    DP indices).  Backward pass propagates transition weights

        E[i, j] = sum over successors s of E[s] * exp((R[s] - R[i,j] - cost[s]) / gamma)

    seeded with E = 1 at the terminal cell.  Because softmin <= min, the
    exponents are never positive, so no overflow guard is needed beyond the
    max-shift inside the forward softmin.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    c = cost.values
    nx, ny = c.shape

    r = np.full((nx + 2, ny + 2), np.inf)
    r[0, 0] = 0.0
    for i in range(1, nx + 1):
        for j in range(1, ny + 1):
            r[i, j] = c[i - 1, j - 1] + softmin(
                (r[i - 1, j - 1], r[i - 1, j], r[i, j - 1]), gamma
            )
    value = float(r[nx, ny])

    cpad = np.zeros((nx + 2, ny + 2))
    cpad[1 : nx + 1, 1 : ny + 1] = c
    e = np.zeros((nx + 2, ny + 2))
    e[nx + 1, ny + 1] = 1.0
    r[nx + 1, :] = -np.inf
    r[:, ny + 1] = -np.inf
    r[nx + 1, ny + 1] = r[nx, ny]
    with np.errstate(invalid="ignore"):
        for i in range(nx, 0, -1):
            for j in range(ny, 0, -1):
                w_down = np.exp((r[i + 1, j] - r[i, j] - cpad[i + 1, j]) / gamma)
                w_right = np.exp((r[i, j + 1] - r[i, j] - cpad[i, j + 1]) / gamma)
                w_diag = np.exp((r[i + 1, j + 1] - r[i, j] - cpad[i + 1, j + 1]) / gamma)
                e[i, j] = (
                    e[i + 1, j] * w_down
                    + e[i, j + 1] * w_right
                    + e[i + 1, j + 1] * w_diag
                )
    grad = e[1 : nx + 1, 1 : ny + 1].copy()
    return value, grad


def anneal_step(config: SoftDtwConfig) -> SoftDtwConfig:
    """One geometric temperature decay, clamped at the floor."""
    return replace(config, gamma=max(config.anneal_floor, config.gamma * config.anneal_factor))


def validate_path(path: AlignmentPath, nx: int, ny: int) -> bool:
    """True iff the path satisfies boundary, monotonicity and continuity."""
    px, py = path.px, path.py
    if px[0] != 0 or py[0] != 0 or px[-1] != nx - 1 or py[-1] != ny - 1:
        return False
    dx = np.diff(px)
    dy = np.diff(py)
    steps_ok = (
        ((dx == 1) & (dy == 0)) | ((dx == 0) & (dy == 1)) | ((dx == 1) & (dy == 1))
    )
    return bool(steps_ok.all())


def uniform_path(nx: int, ny: int) -> AlignmentPath:
    """Uniform-stretch diagonal path, the initializer for alternating methods."""
    n = max(nx, ny)
    k = np.arange(n)
    px = np.round(k * (nx - 1) / max(n - 1, 1)).astype(np.int64)
    py = np.round(k * (ny - 1) / max(n - 1, 1)).astype(np.int64)
    return AlignmentPath(px, py)


def save_path(path: AlignmentPath, file: str | Path) -> None:
    lines = ["px,py"] + [f"{int(a)},{int(b)}" for a, b in zip(path.px, path.py)]
    Path(file).write_text("\n".join(lines) + "\n")


def load_path(file: str | Path) -> AlignmentPath:
    lines = Path(file).read_text().splitlines()
    if not lines or lines[0].strip() != "px,py":
        raise LoadError(f"{file}: expected 'px,py' header")
    px, py = [], []
    for i, line in enumerate(lines[1:]):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != 2:
            raise LoadError(f"{file}: line {i + 1}: expected two columns")
        px.append(int(cells[0]))
        py.append(int(cells[1]))
    return AlignmentPath(np.asarray(px), np.asarray(py))
