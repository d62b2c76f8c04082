"""Discrimination, calibration and clinical-utility metrics for 7-day risks.

All metrics are pure functions of (predicted risk, observed binary outcome)
pairs. Inputs are first sorted into a canonical order and reductions use
compensated summation, so every metric is bit-for-bit invariant under row
permutation. Metrics that are undefined on the given pairs (no positives,
degenerate design, too few rows) come back None rather than raising.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special, stats
from statsmodels.nonparametric.smoothers_lowess import lowess

from .errors import InvalidInputError

CLIP = 1e-10             # probability clipping bound for logit and logloss
ECI_MIN_N = 20           # below this the smoother is not trusted
IRLS_MAX_ITER = 100
IRLS_TOL = 1e-8
SPLINE_DF = 6
CURVE_GRID_SIZE = 100
NET_BENEFIT_MAX = 0.06

METRIC_NAMES = (
    "AUROC",
    "AUPRC",
    "BSS",
    "EO",
    "CalSlope",
    "CalIntercept",
    "ECI",
    "LogLoss",
)


@dataclass(frozen=True)
class MetricReport:
    split_id: object
    model: str
    scope: str        # pooled | per-lm
    lm: int | None    # None for pooled
    metric: str
    value: float | None


@dataclass(frozen=True)
class CurvePoints:
    x: np.ndarray
    y: np.ndarray
    counts: np.ndarray | None = None


@dataclass(frozen=True)
class NetBenefitCurve:
    threshold: np.ndarray
    model: np.ndarray
    treat_all: np.ndarray
    treat_none: np.ndarray


def _pairs(p, y) -> tuple[np.ndarray, np.ndarray]:
    """Validate and sort pairs into the canonical (p, y) order."""
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    if p.ndim != 1 or p.shape != y.shape:
        raise InvalidInputError("predictions and outcomes must be matching 1-d arrays")
    if p.size == 0:
        raise InvalidInputError("no evaluation pairs")
    if not np.isfinite(p).all() or (p < 0).any() or (p > 1).any():
        raise InvalidInputError("predicted risks must be finite and within [0, 1]")
    if not np.isin(y, (0.0, 1.0)).all():
        raise InvalidInputError("outcomes must be 0 or 1")
    order = np.lexsort((y, p))
    return p[order], y[order].astype(np.int64)


def _mean(values) -> float:
    values = np.asarray(values, dtype=float)
    return math.fsum(values) / values.size


def _clipped(p: np.ndarray) -> np.ndarray:
    return np.clip(p, CLIP, 1.0 - CLIP)


def auroc(p, y) -> float | None:
    """P(random positive outranks random negative), ties counted half."""
    p, y = _pairs(p, y)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = stats.rankdata(p, method="average")
    u = math.fsum(ranks[y == 1]) - n_pos * (n_pos + 1) / 2
    return u / (n_pos * n_neg)


def auprc(p, y) -> float | None:
    """Average precision with tied scores processed as one group."""
    p, y = _pairs(p, y)
    n_pos = int(y.sum())
    if n_pos == 0:
        return None
    p_desc = p[::-1]
    y_desc = y[::-1]
    ends = np.flatnonzero(np.r_[p_desc[1:] != p_desc[:-1], True])
    tp = np.cumsum(y_desc)[ends]
    seen = ends + 1
    d_tp = np.diff(np.r_[0, tp])
    return math.fsum(d_tp / n_pos * (tp / seen))


def brier_and_bss(p, y) -> tuple[float, float | None]:
    """Brier score and its skill against the prevalence-constant reference."""
    p, y = _pairs(p, y)
    brier = _mean((p - y) ** 2)
    prevalence = _mean(y)
    reference = _mean((prevalence - y) ** 2)
    if reference == 0.0:
        return brier, None
    return brier, 1.0 - brier / reference


def eo_ratio(p, y) -> float | None:
    """Mean predicted risk over observed event rate."""
    p, y = _pairs(p, y)
    observed = _mean(y)
    if observed == 0.0:
        return None
    return _mean(p) / observed


def logloss(p, y) -> float:
    p, y = _pairs(p, y)
    pc = _clipped(p)
    return -_mean(y * np.log(pc) + (1 - y) * np.log1p(-pc))


def _irls_logistic(X: np.ndarray, y: np.ndarray, offset=None) -> np.ndarray | None:
    """Logistic fit by iteratively reweighted least squares; None on failure."""
    n, k = X.shape
    off = np.zeros(n) if offset is None else offset
    beta = np.zeros(k)
    for _ in range(IRLS_MAX_ITER):
        eta = X @ beta + off
        mu = special.expit(eta)
        w = np.maximum(mu * (1.0 - mu), 1e-12)
        z = eta - off + (y - mu) / w
        xtw = X.T * w
        try:
            new = np.linalg.solve(xtw @ X, xtw @ z)
        except np.linalg.LinAlgError:
            return None
        if not np.isfinite(new).all():
            return None
        if np.abs(new - beta).max() <= IRLS_TOL * max(1.0, np.abs(new).max()):
            return new
        beta = new
    return None


def calibration_slope_intercept(p, y) -> tuple[float | None, float | None]:
    """Weak (slope) and mean (intercept) calibration on the logit scale.

    The slope comes from regressing y on logit(p); the intercept from the
    model with logit(p) as a fixed offset. Each is None when its fit is
    degenerate or does not converge within the iteration budget.
    """
    p, y = _pairs(p, y)
    z = special.logit(_clipped(p))
    yf = y.astype(float)

    slope = None
    if np.ptp(z) > 0:
        fit = _irls_logistic(np.column_stack([np.ones_like(z), z]), yf)
        if fit is None:
            warnings.warn("calibration slope fit did not converge", RuntimeWarning)
        else:
            slope = float(fit[1])
    else:
        warnings.warn("calibration slope undefined for constant predictions", RuntimeWarning)

    intercept = None
    fit = _irls_logistic(np.ones((z.size, 1)), yf, offset=z)
    if fit is None:
        warnings.warn("calibration intercept fit did not converge", RuntimeWarning)
    else:
        intercept = float(fit[0])
    return slope, intercept


def eci(p, y) -> float | None:
    """Estimated calibration index: 100 x mean squared gap to a loess fit."""
    p, y = _pairs(p, y)
    if p.size < ECI_MIN_N:
        return None
    delta = 0.01 * np.ptp(p) if p.size > 5000 else 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        smoothed = lowess(y.astype(float), p, frac=0.75, it=0, delta=delta,
                          return_sorted=False)
    if not np.isfinite(smoothed).all():
        warnings.warn("loess smoother failed; ECI absent", RuntimeWarning)
        return None
    return 100.0 * _mean((p - smoothed) ** 2)


def _natural_spline_basis(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """Natural cubic spline basis (len(knots) - 1 columns, no intercept)."""
    last = knots[-1]
    second_last = knots[-2]

    def ramp(k):
        return ((np.clip(x - k, 0.0, None)) ** 3 - (np.clip(x - last, 0.0, None)) ** 3) / (last - k)

    base = ramp(second_last)
    cols = [x] + [ramp(k) - base for k in knots[:-2]]
    return np.column_stack(cols)


def calibration_curve(p, y, method: str = "deciles") -> CurvePoints | None:
    """Observed-versus-predicted series, by deciles or a smooth spline fit."""
    p, y = _pairs(p, y)
    if method == "deciles":
        edges = np.unique(np.quantile(p, np.linspace(0.0, 1.0, 11)))
        if edges.size < 2:
            return CurvePoints(np.array([_mean(p)]), np.array([_mean(y)]),
                               np.array([p.size]))
        bins = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, edges.size - 2)
        counts = np.bincount(bins, minlength=edges.size - 1)
        keep = counts > 0
        mean_p = np.bincount(bins, weights=p, minlength=edges.size - 1)[keep] / counts[keep]
        mean_y = np.bincount(bins, weights=y, minlength=edges.size - 1)[keep] / counts[keep]
        return CurvePoints(mean_p, mean_y, counts[keep])
    if method == "splines":
        z = special.logit(_clipped(p))
        if np.unique(z).size < SPLINE_DF + 1:
            warnings.warn("too few distinct risks for a spline curve", RuntimeWarning)
            return None
        knots = np.unique(np.quantile(z, np.linspace(0.0, 1.0, SPLINE_DF + 1)))
        if knots.size < 3:
            return None
        basis = _natural_spline_basis(z, knots)
        design = np.column_stack([np.ones(z.size), basis])
        fit = _irls_logistic(design, y.astype(float))
        if fit is None:
            warnings.warn("spline calibration fit did not converge", RuntimeWarning)
            return None
        grid = np.linspace(p.min(), p.max(), CURVE_GRID_SIZE)
        zg = special.logit(_clipped(grid))
        design_g = np.column_stack([np.ones(zg.size), _natural_spline_basis(zg, knots)])
        return CurvePoints(grid, special.expit(design_g @ fit))
    raise InvalidInputError(f"unknown calibration curve method {method!r}")


def net_benefit(p, y, thresholds=None) -> NetBenefitCurve:
    """Decision-curve series for the model, treat-all and treat-none."""
    p, y = _pairs(p, y)
    if thresholds is None:
        thresholds = np.linspace(0.0, NET_BENEFIT_MAX, 61)
    t = np.asarray(thresholds, dtype=float)
    if (t < 0).any() or (t >= 1).any():
        raise InvalidInputError("thresholds must lie in [0, 1)")
    n = p.size
    n_pos = int(y.sum())
    tp_suffix = np.r_[np.cumsum(y[::-1])[::-1], 0]
    start = np.searchsorted(p, t, side="left")
    tp = tp_suffix[start]
    fp = (n - start) - tp
    weight = t / (1.0 - t)
    model = tp / n - fp / n * weight
    treat_all = n_pos / n - (n - n_pos) / n * weight
    return NetBenefitCurve(t, model, treat_all, np.zeros_like(t))


def evaluate_pairs(p, y) -> dict[str, float | None]:
    """Every metric of the report vocabulary for one set of pairs."""
    out: dict[str, float | None] = {}
    out["AUROC"] = auroc(p, y)
    out["AUPRC"] = auprc(p, y)
    out["BSS"] = brier_and_bss(p, y)[1]
    out["EO"] = eo_ratio(p, y)
    slope, intercept = calibration_slope_intercept(p, y)
    out["CalSlope"] = slope
    out["CalIntercept"] = intercept
    out["ECI"] = eci(p, y)
    out["LogLoss"] = logloss(p, y)
    return out


def pooled_reports(split_id, model: str, p, y) -> list[MetricReport]:
    values = evaluate_pairs(p, y)
    return [
        MetricReport(split_id, model, "pooled", None, name, values[name])
        for name in METRIC_NAMES
    ]


def per_landmark_reports(split_id, model: str, p, y, lm) -> list[MetricReport]:
    p = np.asarray(p, dtype=float)
    y = np.asarray(y)
    lm = np.asarray(lm)
    if not (p.shape == y.shape == lm.shape):
        raise InvalidInputError("per-landmark evaluation needs aligned columns")
    reports: list[MetricReport] = []
    for value in np.unique(lm):
        sel = lm == value
        metrics = evaluate_pairs(p[sel], y[sel])
        reports.extend(
            MetricReport(split_id, model, "per-lm", int(value), name, metrics[name])
            for name in METRIC_NAMES
        )
    return reports
