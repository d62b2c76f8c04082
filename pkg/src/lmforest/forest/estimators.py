"""Nonparametric survival estimators used at terminal nodes.

All take flat arrays (repeats allowed, so bootstrap multiplicity weights
observations naturally) and return right-continuous step functions.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError
from ..stepfun import StepFunction


def _event_table(time: np.ndarray, flag: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct event times with event counts and at-risk counts."""
    grid, d = np.unique(time[flag], return_counts=True)
    if grid.size == 0:
        return grid, np.zeros(0), np.zeros(0)
    # at risk means still under observation just before t
    order = np.sort(time)
    y = len(time) - np.searchsorted(order, grid, side="left")
    return grid, d.astype(float), y.astype(float)


def _check(time: np.ndarray, status: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    time = np.asarray(time, dtype=float)
    status = np.asarray(status, dtype=np.int64)
    if time.shape != status.shape or time.ndim != 1:
        raise InvalidInputError("time and status must be 1-d arrays of equal length")
    if np.any(time <= 0):
        raise InvalidInputError("times must be positive")
    return time, status


def kaplan_meier(time: np.ndarray, status: np.ndarray) -> StepFunction:
    """Product-limit survival curve; status is 1 for events, 0 for censored."""
    time, status = _check(time, status)
    grid, d, y = _event_table(time, status == 1)
    surv = np.cumprod(1.0 - d / y) if grid.size else np.zeros(0)
    return StepFunction(grid, surv, y0=1.0)


def nelson_aalen(time: np.ndarray, status: np.ndarray) -> StepFunction:
    """Cumulative hazard estimate; status is 1 for events, 0 for censored."""
    time, status = _check(time, status)
    grid, d, y = _event_table(time, status == 1)
    cumhaz = np.cumsum(d / y) if grid.size else np.zeros(0)
    return StepFunction(grid, cumhaz, y0=0.0)


def aalen_johansen(time: np.ndarray, status: np.ndarray) -> dict[int, StepFunction]:
    """Cause-specific cumulative incidence functions for causes 1, 2, 3.

    Status 0 is censoring. CIF_k jumps by S(t-) * d_k / Y at each event
    time, with S the all-cause Kaplan-Meier curve, so S + sum_k CIF_k is
    exactly 1 at every event time.
    """
    time, status = _check(time, status)
    causes = (1, 2, 3)
    if np.any((status < 0) | (status > 3)):
        raise InvalidInputError("status codes must lie in {0, 1, 2, 3}")
    grid, d_all, y = _event_table(time, status > 0)
    if grid.size == 0:
        return {k: StepFunction(grid, np.zeros(0), y0=0.0) for k in causes}
    surv_before = np.concatenate(([1.0], np.cumprod(1.0 - d_all / y)[:-1]))
    out = {}
    for k in causes:
        d_k = np.bincount(
            np.searchsorted(grid, time[status == k]), minlength=grid.size
        ).astype(float)
        out[k] = StepFunction(grid, np.cumsum(surv_before * d_k / y), y0=0.0)
    return out
