"""Right-continuous step functions used by the survival estimators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class StepFunction:
    """Piecewise-constant function, right-continuous with left limits.

    ``x`` holds strictly increasing knots, ``y`` the value taken at and
    after each knot, ``y0`` the value before the first knot.
    """

    x: np.ndarray
    y: np.ndarray
    y0: float = 0.0

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 1 or y.shape != x.shape:
            raise ValueError("knots and values must be 1-d arrays of equal length")
        if x.size > 1 and not np.all(np.diff(x) > 0):
            raise ValueError("knots must be strictly increasing")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.x, t_arr, side="right") - 1
        out = np.where(idx >= 0, self.y[np.maximum(idx, 0)] if self.y.size else self.y0, self.y0)
        if self.y.size == 0:
            out = np.full_like(t_arr, self.y0, dtype=float)
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out
