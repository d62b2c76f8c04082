"""Split statistics for the four outcome encodings.

Two layers: pairwise functions scoring one left/right candidate (the
readable reference, also the public contract) and sweep kernels scoring
every cut of a feature-ordered node in one pass. Tree growth uses the
sweeps; tests pin them to the pairwise layer and to brute-force oracles.

Time statistics follow the two-sample logrank construction: at each
distinct event time t with d events and Y at risk overall, the left group
contributes observed d_L against expected Y_L * d / Y, with hypergeometric
variance d * (Y_L/Y) * (1 - Y_L/Y) * (Y - d)/(Y - 1). Times with Y <= 1
are skipped. The competing-risks rules combine per-cause statistics as
sum_k w_k * chi_k^2; the CIF flavour keeps subjects with a prior competing
event in the risk set until the node's maximum observed time, which makes
the cut sensitive to differences in cumulative incidence rather than in
cause-specific hazard.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError

CAUSES = (1, 2, 3)


# ---------------------------------------------------------------------------
# Gini impurity for classification nodes.
# ---------------------------------------------------------------------------


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


def split_gini(labels_left: np.ndarray, labels_right: np.ndarray) -> float:
    """Decrease in Gini impurity from parent to the weighted daughters."""
    left = np.asarray(labels_left, dtype=np.int64)
    right = np.asarray(labels_right, dtype=np.int64)
    if left.size == 0 or right.size == 0:
        raise InvalidInputError("both daughters must be non-empty")
    n_classes = int(max(left.max(), right.max())) + 1
    cl = np.bincount(left, minlength=n_classes).astype(float)
    cr = np.bincount(right, minlength=n_classes).astype(float)
    n = left.size + right.size
    return _gini(cl + cr) - (left.size / n) * _gini(cl) - (right.size / n) * _gini(cr)


def gini_sweep(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Gini decrease at every cut of a feature-ordered node.

    Entry c scores left = rows[:c+1], right = rows[c+1:].
    """
    y = np.asarray(labels, dtype=np.int64)
    n = y.size
    if n < 2:
        return np.zeros(0)
    n_left = np.arange(1.0, n)
    n_right = n - n_left
    sq_left = np.zeros(n - 1)
    sq_right = np.zeros(n - 1)
    total = np.bincount(y, minlength=n_classes).astype(float)
    parent = 1.0 - np.sum((total / n) ** 2)
    for k in range(n_classes):
        ck = np.cumsum(y == k)[:-1].astype(float)
        sq_left += ck * ck
        sq_right += (total[k] - ck) ** 2
    g_left = 1.0 - sq_left / (n_left * n_left)
    g_right = 1.0 - sq_right / (n_right * n_right)
    return parent - (n_left / n) * g_left - (n_right / n) * g_right


# ---------------------------------------------------------------------------
# Two-sample time statistics.
# ---------------------------------------------------------------------------


def _oe_variance(
    event_time: np.ndarray,
    is_event: np.ndarray,
    risk_time: np.ndarray,
    in_left: np.ndarray,
) -> tuple[float, float]:
    """(O - E, V) for the left group at one candidate cut."""
    grid = np.unique(event_time[is_event])
    o_minus_e = 0.0
    variance = 0.0
    for t in grid:
        at_risk = risk_time >= t
        y = np.count_nonzero(at_risk)
        if y <= 1:
            continue
        y_left = np.count_nonzero(at_risk & in_left)
        events_here = is_event & (event_time == t)
        d = np.count_nonzero(events_here)
        d_left = np.count_nonzero(events_here & in_left)
        o_minus_e += d_left - y_left * d / y
        variance += d * (y_left / y) * (1.0 - y_left / y) * (y - d) / (y - 1.0)
    return o_minus_e, variance


def split_logrank(
    left: tuple[np.ndarray, np.ndarray], right: tuple[np.ndarray, np.ndarray]
) -> float:
    """Standardized two-sample logrank statistic |O - E| / sqrt(V)."""
    tl, sl = np.asarray(left[0], dtype=float), np.asarray(left[1], dtype=np.int64)
    tr, sr = np.asarray(right[0], dtype=float), np.asarray(right[1], dtype=np.int64)
    if tl.size == 0 or tr.size == 0:
        raise InvalidInputError("both daughters must be non-empty")
    time = np.concatenate([tl, tr])
    status = np.concatenate([sl, sr])
    in_left = np.zeros(time.size, dtype=bool)
    in_left[: tl.size] = True
    oe, var = _oe_variance(time, status == 1, time, in_left)
    return abs(oe) / np.sqrt(var) if var > 0 else 0.0


def _cause_chi2(
    time: np.ndarray, cause: np.ndarray, in_left: np.ndarray, k: int, subdistribution: bool
) -> float:
    is_event = cause == k
    if subdistribution:
        keeps_own_time = (cause == 0) | (cause == k)
        risk_time = np.where(keeps_own_time, time, time.max())
    else:
        risk_time = time
    oe, var = _oe_variance(time, is_event, risk_time, in_left)
    if var <= 0:
        return 0.0
    chi = abs(oe) / np.sqrt(var)  # squared afterwards so weights (1,0,0)
    return chi * chi              # reproduce the logrank² bit for bit


def _split_cr(
    left: tuple[np.ndarray, np.ndarray],
    right: tuple[np.ndarray, np.ndarray],
    cause_weights,
    subdistribution: bool,
) -> float:
    tl, cl = np.asarray(left[0], dtype=float), np.asarray(left[1], dtype=np.int64)
    tr, cr = np.asarray(right[0], dtype=float), np.asarray(right[1], dtype=np.int64)
    if tl.size == 0 or tr.size == 0:
        raise InvalidInputError("both daughters must be non-empty")
    weights = np.asarray(cause_weights, dtype=float)
    if weights.shape != (3,) or np.any(weights < 0) or not np.any(weights > 0):
        raise InvalidInputError("cause_weights must be 3 non-negative values, not all zero")
    time = np.concatenate([tl, tr])
    cause = np.concatenate([cl, cr])
    in_left = np.zeros(time.size, dtype=bool)
    in_left[: tl.size] = True
    total = 0.0
    for k, w in zip(CAUSES, weights):
        if w > 0:
            total += w * _cause_chi2(time, cause, in_left, k, subdistribution)
    return total


def split_cr_logrank(left, right, cause_weights=(1.0, 1.0, 1.0)) -> float:
    """Weighted sum of squared cause-specific logrank statistics."""
    return _split_cr(left, right, cause_weights, subdistribution=False)


def split_cr_logrank_cif(left, right, cause_weights=(1.0, 1.0, 1.0)) -> float:
    """Gray-type rule: per-cause statistics on subdistribution risk sets."""
    return _split_cr(left, right, cause_weights, subdistribution=True)


# ---------------------------------------------------------------------------
# Sweep kernels: statistic at every cut of a feature-ordered node. Cost per
# cut is O(1) for the numerator and O(grid) for the variance, so run time
# scales with the number of distinct event times; day-grid discretization
# caps that at tau.
# ---------------------------------------------------------------------------


def _oe_variance_sweep(
    event_time: np.ndarray, is_event: np.ndarray, risk_time: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(O - E, V) arrays over all cuts, rows already in feature order."""
    n = event_time.size
    if n < 2:
        return np.zeros(0), np.zeros(0)
    ev_times = event_time[is_event]
    if ev_times.size == 0:
        return np.zeros(n - 1), np.zeros(n - 1)
    grid, d = np.unique(ev_times, return_counts=True)
    sorted_risk = np.sort(risk_time)
    y = (n - np.searchsorted(sorted_risk, grid, side="left")).astype(float)
    keep = y > 1
    grid, y, d = grid[keep], y[keep], d[keep].astype(float)
    m = grid.size
    if m == 0:
        return np.zeros(n - 1), np.zeros(n - 1)
    # per-row expected-count weight: sum of d/Y over grid times <= risk_time
    haz = np.concatenate(([0.0], np.cumsum(d / y)))
    a = haz[np.searchsorted(grid, risk_time, side="right")]
    at_grid = np.minimum(np.searchsorted(grid, event_time), m - 1)
    counts_event = is_event & (grid[at_grid] == event_time)
    o_left = np.cumsum(counts_event.astype(float))[:-1]
    e_left = np.cumsum(a)[:-1]
    q = d * (y - d) / (y * y * (y - 1.0))
    variance = np.zeros(n - 1)
    for j in range(m):
        y_left = np.cumsum(risk_time >= grid[j])[:-1]
        variance += q[j] * y_left * (y[j] - y_left)
    return o_left - e_left, variance


def logrank_sweep(time: np.ndarray, status: np.ndarray) -> np.ndarray:
    """|O - E|/sqrt(V) at every cut; rows already in feature order."""
    oe, var = _oe_variance_sweep(time, status == 1, time)
    out = np.zeros_like(oe)
    pos = var > 0
    out[pos] = np.abs(oe[pos]) / np.sqrt(var[pos])
    return out


def cr_sweep(
    time: np.ndarray, cause: np.ndarray, cause_weights, subdistribution: bool
) -> np.ndarray:
    """Weighted sum of squared per-cause statistics at every cut."""
    time = np.asarray(time, dtype=float)
    cause = np.asarray(cause, dtype=np.int64)
    weights = np.asarray(cause_weights, dtype=float)
    total = np.zeros(max(time.size - 1, 0))
    node_max = time.max() if time.size else 0.0
    for k, w in zip(CAUSES, weights):
        if w <= 0:
            continue
        if subdistribution:
            keeps_own_time = (cause == 0) | (cause == k)
            risk_time = np.where(keeps_own_time, time, node_max)
        else:
            risk_time = time
        oe, var = _oe_variance_sweep(time, cause == k, risk_time)
        pos = var > 0
        chi2 = np.zeros_like(oe)
        chi = np.abs(oe[pos]) / np.sqrt(var[pos])
        chi2[pos] = chi * chi
        total += w * chi2
    return total
