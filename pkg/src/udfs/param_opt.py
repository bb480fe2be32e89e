"""Square loss and hierarchical grid search over parameter values."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .expr_core import ExpressionDag, evaluate_grid

MAX_GRID_POINTS = 250_000


@dataclass(frozen=True)
class GridConfig:
    grid_size: int = 50
    levels: int = 2
    interval: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "interval", (float(self.interval[0]), float(self.interval[1])))
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if not self.interval[0] < self.interval[1]:
            raise ValueError("interval must satisfy lo < hi")

    @property
    def initial_spacing(self) -> float:
        lo, hi = self.interval
        return (hi - lo) / (self.grid_size - 1)

    @property
    def final_spacing(self) -> float:
        return self.initial_spacing * (2.0 / (self.grid_size - 1)) ** (self.levels - 1)

    def level_grid(self, center: float | None = None, step: float | None = None) -> np.ndarray:
        if center is None:
            lo, hi = self.interval
        else:
            lo, hi = center - step, center + step
        return np.linspace(lo, hi, self.grid_size)


def _as_targets(Y, n: int) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if Y.shape[0] != n:
        raise ValueError(f"Y has {Y.shape[0]} rows, X has {n}")
    return Y


def grid_losses(frame: ExpressionDag, X, Y, thetas: np.ndarray) -> np.ndarray:
    """Square loss for each row of ``thetas`` (inf where any sample is invalid)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    Y = _as_targets(Y, X.shape[0])
    if Y.shape[1] != len(frame.outputs):
        raise ValueError("Y column count must match the number of outputs")
    values, valid = evaluate_grid(frame, X, thetas)
    with np.errstate(all="ignore"):
        diff = values - Y[None, :, :]
        loss = np.sum(diff * diff, axis=(1, 2))
    loss[~np.all(valid, axis=1)] = np.inf
    loss[~np.isfinite(loss)] = np.inf
    return loss


def square_loss(frame: ExpressionDag, X, Y, theta=None) -> float:
    """Sum over samples of the squared output error; inf if any sample is invalid."""
    theta = np.asarray([] if theta is None else theta, dtype=np.float64).reshape(1, -1)
    if theta.shape[1] != frame.n_params:
        raise ValueError(f"theta must have {frame.n_params} entries")
    return float(grid_losses(frame, X, Y, theta)[0])


def _cartesian(axes: list[np.ndarray]) -> np.ndarray:
    return np.array(list(itertools.product(*axes)), dtype=np.float64).reshape(-1, len(axes))


def fit_parameters(frame: ExpressionDag, X, Y, grid: GridConfig | None = None) -> tuple[np.ndarray, float]:
    """Hierarchical grid search for the parameters of ``frame``.

    Level one evaluates the full grid on ``grid.interval`` in a single batched
    pass.  Each further level re-grids ``[best - step, best + step]`` per used
    parameter, where ``step`` is the previous spacing.  Ties go to the lowest
    grid index, and an earlier level keeps its optimum unless a later level is
    strictly better.  Parameters the outputs do not depend on are set to 0.
    """
    grid = grid or GridConfig()
    p = frame.n_params
    if p == 0:
        return np.zeros(0), square_loss(frame, X, Y)
    used = frame.used_params()
    theta = np.zeros(p)
    if not used:
        return theta, square_loss(frame, X, Y, theta)
    if grid.grid_size ** len(used) > MAX_GRID_POINTS:
        raise ValueError(f"{len(used)} parameters exceed the grid cap of {MAX_GRID_POINTS} points")

    def expand(sub: np.ndarray) -> np.ndarray:
        full = np.zeros((sub.shape[0], p))
        full[:, used] = sub
        return full

    axes = [grid.level_grid()] * len(used)
    step = grid.initial_spacing
    cand = _cartesian(axes)
    losses = grid_losses(frame, X, Y, expand(cand))
    b = int(np.argmin(losses))
    best, best_loss = cand[b], float(losses[b])
    for _ in range(1, grid.levels):
        axes = [grid.level_grid(c, step) for c in best]
        step = 2.0 * step / (grid.grid_size - 1)
        cand = _cartesian(axes)
        losses = grid_losses(frame, X, Y, expand(cand))
        b = int(np.argmin(losses))
        if losses[b] < best_loss:
            best, best_loss = cand[b], float(losses[b])
    theta[used] = best
    return theta, best_loss
