"""Model-based search over forest hyperparameters.

A small Kriging surrogate (constant mean, anisotropic squared-exponential
kernel) drives expected-improvement proposals: 20 uniform design evaluations
followed by 30 sequential proposals, each the EI argmax over 1024 random
candidates. The objective is the out-of-bag binary 7-day logloss, but `tune`
accepts any callable so cheap synthetic objectives can exercise the loop.

Everything is seeded: design draws, candidate draws, and the multi-start
likelihood fits, so a tuning run is reproducible end to end.
"""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize, special

from .errors import InvalidInputError, LmForestError
from .forest import Hyperparams, fit, oob_predict
from .metrics import logloss

NUGGET_FLOOR = 1e-8
NUGGET_CEILING = 1e-2
N_DESIGN = 20
N_OPTIMIZATION = 30
N_CANDIDATES = 1024

TRACE_COLUMNS = ("step", "phase", "mtry", "nodesize", "subsample_fraction",
                 "objective", "seconds")


@dataclass(frozen=True)
class Dimension:
    name: str
    lower: float
    upper: float
    integer: bool = False

    def __post_init__(self) -> None:
        if not self.lower < self.upper:
            raise InvalidInputError(f"dimension {self.name!r} has an empty range")

    def round(self, value: float) -> float:
        if self.integer:
            value = math.floor(value + 0.5)
        return float(min(max(value, self.lower), self.upper))


@dataclass(frozen=True)
class SearchSpace:
    dimensions: tuple[Dimension, ...]

    def __post_init__(self) -> None:
        names = [d.name for d in self.dimensions]
        if not names or len(set(names)) != len(names):
            raise InvalidInputError("search space needs uniquely named dimensions")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dimensions]

    def normalize(self, points: np.ndarray) -> np.ndarray:
        lo = np.array([d.lower for d in self.dimensions])
        hi = np.array([d.upper for d in self.dimensions])
        return (np.asarray(points, dtype=float) - lo) / (hi - lo)


def baseline_space() -> SearchSpace:
    return SearchSpace((
        Dimension("mtry", 2, 15, integer=True),
        Dimension("nodesize", 50, 4000, integer=True),
    ))


def dynamic_space() -> SearchSpace:
    return SearchSpace(baseline_space().dimensions + (
        Dimension("subsample_fraction", 0.30, 0.80),
    ))


@dataclass(frozen=True)
class TraceEntry:
    step: int        # 1-based over the whole run
    phase: str       # design | optimization
    params: dict
    objective: float  # +inf marks a failed evaluation
    seconds: float


@dataclass
class TuneResult:
    best_params: dict
    best_objective: float
    trace: list[TraceEntry] = field(repr=False)


# ---------------------------------------------------------------------------
# Gaussian-process surrogate
# ---------------------------------------------------------------------------


@dataclass
class Surrogate:
    X: np.ndarray
    y_mean: float
    y_sd: float
    mean_std: float
    log_ls: np.ndarray
    log_var: float
    nugget: float
    L: np.ndarray | None
    alpha: np.ndarray | None
    constant: bool = False


def _kernel(A: np.ndarray, B: np.ndarray, log_ls: np.ndarray, log_var: float) -> np.ndarray:
    ls = np.exp(log_ls)
    diff = (A[:, None, :] - B[None, :, :]) / ls
    return math.exp(log_var) * np.exp(-0.5 * np.sum(diff * diff, axis=-1))


def _try_cholesky(K: np.ndarray) -> np.ndarray | None:
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return None


def _gls_mean(L: np.ndarray, y: np.ndarray) -> float:
    ones = np.ones_like(y)
    k_inv_y = linalg.cho_solve((L, True), y)
    k_inv_1 = linalg.cho_solve((L, True), ones)
    return float(ones @ k_inv_y / (ones @ k_inv_1))


def _negative_log_likelihood(theta: np.ndarray, X: np.ndarray, y: np.ndarray,
                             nugget: float) -> float:
    if np.abs(theta).max() > 20.0:
        return 1e10
    K = _kernel(X, X, theta[:-1], theta[-1])
    K[np.diag_indices_from(K)] += nugget
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return 1e10
    mu = _gls_mean(L, y)
    r = y - mu
    alpha = linalg.cho_solve((L, True), r)
    return float(0.5 * r @ alpha + np.log(np.diag(L)).sum()
                 + 0.5 * y.size * math.log(2.0 * math.pi))


def fit_surrogate(X: np.ndarray, y: np.ndarray, seed=0) -> Surrogate:
    """Maximum-likelihood Kriging fit over seeded Nelder-Mead restarts.

    Inputs are taken as given (callers normalize to the unit box); the
    response is standardized internally. A singular kernel escalates the
    nugget tenfold at a time, up to 1e-2, with a warning.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.size or y.size == 0:
        raise InvalidInputError("surrogate needs matching, non-empty inputs")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise InvalidInputError("surrogate inputs must be finite")

    y_mean = float(y.mean())
    y_sd = float(y.std())
    if y.size == 1 or y_sd == 0.0:
        return Surrogate(X, y_mean, 1.0, 0.0, np.zeros(X.shape[1]), 0.0,
                         NUGGET_FLOOR, None, None, constant=True)
    y_std = (y - y_mean) / y_sd

    d = X.shape[1]
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    starts = [np.r_[np.full(d, math.log(0.3)), 0.0]]
    for _ in range(2):
        starts.append(np.r_[rng.uniform(math.log(0.05), math.log(2.0), size=d),
                            rng.uniform(-2.0, 2.0)])

    best_theta, best_nll = None, np.inf
    for start in starts:
        res = optimize.minimize(
            _negative_log_likelihood, start, args=(X, y_std, NUGGET_FLOOR),
            method="Nelder-Mead",
            options={"maxiter": 60 * (d + 1), "xatol": 1e-2, "fatol": 1e-5},
        )
        if res.fun < best_nll:
            best_nll, best_theta = float(res.fun), np.asarray(res.x)
    if best_theta is None or best_nll >= 1e10:
        best_theta = starts[0]

    nugget = NUGGET_FLOOR
    while True:
        K = _kernel(X, X, best_theta[:-1], best_theta[-1])
        K[np.diag_indices_from(K)] += nugget
        L = _try_cholesky(K)
        if L is not None:
            break
        if nugget >= NUGGET_CEILING:
            raise LmForestError("kernel matrix stayed singular at the nugget ceiling")
        nugget *= 10.0
        warnings.warn(f"singular kernel; nugget escalated to {nugget:g}", RuntimeWarning)

    mean_std = _gls_mean(L, y_std)
    alpha = linalg.cho_solve((L, True), y_std - mean_std)
    return Surrogate(X, y_mean, y_sd, mean_std, best_theta[:-1], float(best_theta[-1]),
                     nugget, L, alpha)


def predict(surrogate: Surrogate, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and standard deviation at query points."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if surrogate.constant:
        return np.full(Q.shape[0], surrogate.y_mean), np.zeros(Q.shape[0])
    k = _kernel(Q, surrogate.X, surrogate.log_ls, surrogate.log_var)
    mean_std = surrogate.mean_std + k @ surrogate.alpha
    v = linalg.cho_solve((surrogate.L, True), k.T)
    var = math.exp(surrogate.log_var) + surrogate.nugget - np.sum(k * v.T, axis=1)
    sd_std = np.sqrt(np.clip(var, 0.0, None))
    return mean_std * surrogate.y_sd + surrogate.y_mean, sd_std * surrogate.y_sd


def expected_improvement(mean, sd, best: float) -> np.ndarray:
    """Closed-form EI for minimization; zero wherever sd is zero."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    out = np.zeros_like(mean)
    live = sd > 0
    z = (best - mean[live]) / sd[live]
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    out[live] = (best - mean[live]) * special.ndtr(z) + sd[live] * pdf
    return np.clip(out, 0.0, None)


# ---------------------------------------------------------------------------
# the tuning loop
# ---------------------------------------------------------------------------


def _params_dict(space: SearchSpace, point: tuple) -> dict:
    return {d.name: (int(v) if d.integer else float(v))
            for d, v in zip(space.dimensions, point)}


def _draw_point(space: SearchSpace, rng: np.random.Generator) -> tuple:
    vals = []
    for d in space.dimensions:
        if d.integer:
            vals.append(float(rng.integers(int(d.lower), int(d.upper) + 1)))
        else:
            vals.append(float(rng.uniform(d.lower, d.upper)))
    return tuple(vals)


def _draw_candidates(space: SearchSpace, rng: np.random.Generator) -> np.ndarray:
    cols = []
    for d in space.dimensions:
        col = rng.uniform(d.lower, d.upper, size=N_CANDIDATES)
        if d.integer:
            col = np.clip(np.floor(col + 0.5), d.lower, d.upper)
        cols.append(col)
    return np.column_stack(cols)


def _perturb(space: SearchSpace, point: tuple, rng: np.random.Generator,
             seen: set) -> tuple:
    for _ in range(50):
        vals = []
        for d, v in zip(space.dimensions, point):
            if d.integer:
                vals.append(d.round(v + float(rng.integers(-2, 3))))
            else:
                vals.append(d.round(v + rng.normal(0.0, 0.05 * (d.upper - d.lower))))
        cand = tuple(vals)
        if cand not in seen:
            return cand
    return point


def tune(objective, space: SearchSpace, seed=0,
         n_design: int = N_DESIGN, n_iter: int = N_OPTIMIZATION) -> TuneResult:
    """Run the 20 + 30 model-based search and return the trace minimum.

    `objective` maps a params dict to a float; evaluations that raise are
    recorded as +inf and ignored by the surrogate.
    """
    root = np.random.SeedSequence(seed)
    design_ss, cand_ss, fit_ss = root.spawn(3)
    rng_design = np.random.Generator(np.random.PCG64(design_ss))
    rng_cand = np.random.Generator(np.random.PCG64(cand_ss))
    fit_seeds = fit_ss.spawn(n_iter)

    trace: list[TraceEntry] = []
    evaluated: dict[tuple, float] = {}

    def run(point: tuple, phase: str) -> None:
        params = _params_dict(space, point)
        t0 = time.perf_counter()
        try:
            value = float(objective(params))
        except Exception as exc:  # noqa: BLE001 - failures become +inf by contract
            warnings.warn(f"objective failed at {params}: {exc}", RuntimeWarning)
            value = math.inf
        seconds = time.perf_counter() - t0
        evaluated[point] = value
        trace.append(TraceEntry(len(trace) + 1, phase, params, value, seconds))

    design: list[tuple] = []
    attempts = 0
    while len(design) < n_design:
        point = _draw_point(space, rng_design)
        attempts += 1
        if point in design and attempts < 200:
            continue
        design.append(point)
    for point in design:
        run(point, "design")

    for it in range(n_iter):
        finite = [(pt, val) for pt, val in evaluated.items() if math.isfinite(val)]
        if len(finite) >= 2 and any(v != finite[0][1] for _, v in finite):
            pts = np.array([pt for pt, _ in finite])
            vals = np.array([val for _, val in finite])
            surrogate = fit_surrogate(space.normalize(pts), vals, seed=fit_seeds[it])
            best = float(vals.min())

            def propose() -> tuple:
                cands = _draw_candidates(space, rng_cand)
                mean, sd = predict(surrogate, space.normalize(cands))
                return tuple(cands[int(np.argmax(expected_improvement(mean, sd, best)))])

            point = propose()
            if point in evaluated:
                point = propose()
            if point in evaluated:
                point = _perturb(space, point, rng_cand, set(evaluated))
        else:
            point = _draw_point(space, rng_cand)
        run(point, "optimization")

    finite_entries = [e for e in trace if math.isfinite(e.objective)]
    if not finite_entries:
        raise LmForestError("every objective evaluation failed")
    best_entry = min(finite_entries, key=lambda e: (e.objective, e.step))
    return TuneResult(dict(best_entry.params), best_entry.objective, trace)


def oob_logloss_objective(X, admission_id, outcome, rule, base_hyperparams: Hyperparams,
                          y_binary, sample_mode: str = "bootstrap",
                          horizon: float = 7.0):
    """Objective factory: out-of-bag binary logloss of the fitted variant.

    Rows with no out-of-bag prediction are excluded from the loss.
    """
    y_binary = np.asarray(y_binary)

    def objective(params: dict) -> float:
        hp = replace(
            base_hyperparams,
            mtry=int(params["mtry"]),
            nodesize=int(params["nodesize"]),
            subsample_fraction=float(params["subsample_fraction"])
            if "subsample_fraction" in params
            else base_hyperparams.subsample_fraction,
        )
        forest = fit(X, admission_id, outcome, rule, hp, sample_mode=sample_mode)
        risk, count = oob_predict(forest, horizon)
        covered = count > 0
        if not covered.any():
            raise LmForestError("no out-of-bag predictions at this configuration")
        return logloss(risk[covered], y_binary[covered])

    return objective


def write_trace_csv(trace: list[TraceEntry], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for entry in trace:
            params = entry.params
            writer.writerow([
                entry.step,
                entry.phase,
                params.get("mtry", ""),
                params.get("nodesize", ""),
                repr(params["subsample_fraction"]) if "subsample_fraction" in params else "",
                repr(entry.objective),
                repr(entry.seconds),
            ])
