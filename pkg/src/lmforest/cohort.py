"""Catheter episodes, landmark grids, outcome encodings and cohort I/O.

A cohort is a stack of landmark rows: one row per (episode, landmark day)
with static covariates and the episode's terminal event. All outcome
encodings (binary, multinomial, survival, competing risks) are derived from
the residual time ``event_time - lm``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidInputError

GAP_DAYS = 2.0
RISK_WINDOW_DAYS = 2.0

ID_COLUMNS = ("admission_id", "episode_id", "lm")
OUTCOME_COLUMNS = ("event_type", "event_time")
MISSING_TOKENS = ("", "NA")


class EventType(IntEnum):
    CENSORED = 0
    CLABSI = 1
    DEATH = 2
    DISCHARGE = 3


EVENT_NAMES = {
    EventType.CENSORED: "Censored",
    EventType.CLABSI: "CLABSI",
    EventType.DEATH: "Death",
    EventType.DISCHARGE: "Discharge",
}
EVENT_CODES = {name: kind for kind, name in EVENT_NAMES.items()}


class CensorScheme(Enum):
    """How competing events are censored in the single-event encoding."""

    AT_EVENT_TIME = "at_event_time"
    AT_HORIZON = "at_horizon"


@dataclass(frozen=True)
class CatheterInterval:
    admission_id: str
    start: float
    end: float


@dataclass(frozen=True)
class CatheterEpisode:
    admission_id: str
    episode_id: int
    start: float
    event_type: EventType
    event_time: float  # days since episode start, > 0


@dataclass(frozen=True)
class LandmarkRow:
    admission_id: str
    episode_id: int
    lm: int
    covariates: dict[str, float]
    event_type: EventType
    event_time: float  # days since episode start


@dataclass(frozen=True)
class TimeToEvent:
    time: float
    status: int


def assemble_episodes(
    intervals: Iterable[CatheterInterval],
    end_events: Mapping[str, tuple[EventType, float]],
    *,
    gap: float = GAP_DAYS,
    risk_window: float = RISK_WINDOW_DAYS,
) -> list[CatheterEpisode]:
    """Merge catheter intervals into episodes and attach terminal events.

    Intervals of one admission closer than ``gap`` days merge. An episode's
    risk window extends ``risk_window`` days past the last removal; the
    admission's end event is the episode event when it falls inside that
    window, otherwise the episode ends with a Discharge at window close.
    """
    by_adm: dict[str, list[CatheterInterval]] = {}
    for iv in intervals:
        if not (iv.end > iv.start):
            raise InvalidInputError(
                f"catheter interval for admission {iv.admission_id!r} has non-positive length"
            )
        if iv.start < 0:
            raise InvalidInputError(
                f"catheter interval for admission {iv.admission_id!r} starts before day 0"
            )
        by_adm.setdefault(iv.admission_id, []).append(iv)

    episodes: list[CatheterEpisode] = []
    for adm in sorted(by_adm):
        ivs = sorted(by_adm[adm], key=lambda iv: (iv.start, iv.end))
        merged: list[list[float]] = [[ivs[0].start, ivs[0].end]]
        for iv in ivs[1:]:
            if iv.start - merged[-1][1] < gap:
                merged[-1][1] = max(merged[-1][1], iv.end)
            else:
                merged.append([iv.start, iv.end])

        event = end_events.get(adm)
        for k, (start, last_end) in enumerate(merged, start=1):
            window_end = last_end + risk_window
            if event is not None and event[1] <= window_end:
                etype, etime = EventType(event[0]), float(event[1])
                if etime <= start:
                    raise InvalidInputError(
                        f"admission {adm!r} ends at day {etime} before episode {k} starts"
                    )
                if k != len(merged):
                    raise InvalidInputError(
                        f"admission {adm!r} ends at day {etime} but a later episode exists"
                    )
            else:
                etype, etime = EventType.DISCHARGE, window_end
            episodes.append(CatheterEpisode(adm, k, start, etype, etime - start))
    return episodes


def landmark_grid(event_time: float) -> list[int]:
    """Landmark days 0, 1, ... strictly below ``event_time``."""
    if not (event_time > 0):
        raise InvalidInputError("event_time must be positive")
    return list(range(int(math.ceil(event_time))))


def build_landmarks(
    episodes: Sequence[CatheterEpisode],
    covariates: Mapping[tuple[str, int], Mapping[str, float]],
) -> list[LandmarkRow]:
    """Expand episodes into stacked landmark rows with static covariates."""
    rows: list[LandmarkRow] = []
    for ep in episodes:
        cov = dict(covariates.get((ep.admission_id, ep.episode_id), {}))
        for lm in landmark_grid(ep.event_time):
            rows.append(
                LandmarkRow(ep.admission_id, ep.episode_id, lm, cov, ep.event_type, ep.event_time)
            )
    return rows


# ---------------------------------------------------------------------------
# Outcome encodings. Scalar operations wrap the array versions so the two
# can never drift apart.
# ---------------------------------------------------------------------------


def binary_labels(
    event_type: np.ndarray, event_time: np.ndarray, lm: np.ndarray, horizon: float
) -> np.ndarray:
    """1 if a CLABSI occurs in (lm, lm + horizon], else 0."""
    if horizon <= 0:
        raise InvalidInputError("horizon must be positive")
    residual = np.asarray(event_time, dtype=float) - np.asarray(lm, dtype=float)
    is_clabsi = np.asarray(event_type) == int(EventType.CLABSI)
    return (is_clabsi & (residual <= horizon)).astype(np.int64)


def multinomial_labels(
    event_type: np.ndarray, event_time: np.ndarray, lm: np.ndarray, horizon: float
) -> np.ndarray:
    """Event class within the horizon, 0 (no event) past it."""
    if horizon <= 0:
        raise InvalidInputError("horizon must be positive")
    residual = np.asarray(event_time, dtype=float) - np.asarray(lm, dtype=float)
    codes = np.asarray(event_type, dtype=np.int64)
    return np.where(residual <= horizon, codes, 0)


def label_binary(row: LandmarkRow, horizon: float) -> int:
    return int(
        binary_labels(
            np.array([int(row.event_type)]),
            np.array([row.event_time]),
            np.array([row.lm]),
            horizon,
        )[0]
    )


def label_multinomial(row: LandmarkRow, horizon: float) -> int:
    return int(
        multinomial_labels(
            np.array([int(row.event_type)]),
            np.array([row.event_time]),
            np.array([row.lm]),
            horizon,
        )[0]
    )


def competing_times(
    event_type: np.ndarray, event_time: np.ndarray, lm: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Residual time from the landmark and the cause code."""
    residual = np.asarray(event_time, dtype=float) - np.asarray(lm, dtype=float)
    if np.any(residual <= 0):
        raise InvalidInputError("landmark at or after the event time")
    return residual, np.asarray(event_type, dtype=np.int64).copy()


def apply_censor_scheme(
    time: np.ndarray, status: np.ndarray, scheme: CensorScheme, horizon: float
) -> tuple[np.ndarray, np.ndarray]:
    """Collapse competing causes to censorings for the single-event encoding.

    AT_EVENT_TIME censors a competing event where it happened. AT_HORIZON
    pushes competing events occurring before the horizon out to it, the
    risk-set convention of subdistribution-style modelling.
    """
    time = np.asarray(time, dtype=float).copy()
    status = np.asarray(status, dtype=np.int64)
    competing = (status != int(EventType.CLABSI)) & (status != int(EventType.CENSORED))
    if scheme is CensorScheme.AT_HORIZON:
        time[competing & (time < horizon)] = horizon
    new_status = np.where(status == int(EventType.CLABSI), 1, 0)
    return time, new_status


def survival_times(
    event_type: np.ndarray,
    event_time: np.ndarray,
    lm: np.ndarray,
    scheme: CensorScheme,
    horizon: float,
) -> tuple[np.ndarray, np.ndarray]:
    time, status = competing_times(event_type, event_time, lm)
    return apply_censor_scheme(time, status, scheme, horizon)


def to_competing_risks(row: LandmarkRow) -> TimeToEvent:
    time, status = competing_times(
        np.array([int(row.event_type)]), np.array([row.event_time]), np.array([row.lm])
    )
    return TimeToEvent(float(time[0]), int(status[0]))


def to_survival(row: LandmarkRow, scheme: CensorScheme, horizon: float) -> TimeToEvent:
    time, status = survival_times(
        np.array([int(row.event_type)]),
        np.array([row.event_time]),
        np.array([row.lm]),
        scheme,
        horizon,
    )
    return TimeToEvent(float(time[0]), int(status[0]))


def discretize_times(time: np.ndarray) -> np.ndarray:
    """Whole-day times: ceiling, so day 6.1 counts as day 7."""
    time = np.asarray(time, dtype=float)
    if np.any(time <= 0):
        raise InvalidInputError("times must be positive")
    return np.ceil(time)


def administrative_censor_times(
    time: np.ndarray, status: np.ndarray, tau: float
) -> tuple[np.ndarray, np.ndarray]:
    """Censor strictly past ``tau``; events at exactly ``tau`` are kept."""
    time = np.asarray(time, dtype=float)
    status = np.asarray(status, dtype=np.int64)
    late = time > tau
    return np.where(late, float(tau), time), np.where(late, 0, status)


def discretize_time(t: TimeToEvent) -> TimeToEvent:
    return TimeToEvent(float(discretize_times(np.array([t.time]))[0]), t.status)


def administrative_censor(t: TimeToEvent, tau: float) -> TimeToEvent:
    time, status = administrative_censor_times(
        np.array([t.time]), np.array([t.status]), tau
    )
    return TimeToEvent(float(time[0]), int(status[0]))


# ---------------------------------------------------------------------------
# Stacked cohort container and CSV contract.
# ---------------------------------------------------------------------------


@dataclass
class LandmarkFrame:
    """Column-oriented stack of landmark rows. NaN marks a missing value."""

    admission_id: np.ndarray
    episode_id: np.ndarray
    lm: np.ndarray
    X: np.ndarray
    feature_names: list[str]
    event_type: np.ndarray
    event_time: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.admission_id)
        if not (
            len(self.episode_id) == len(self.lm) == len(self.event_type) == len(self.event_time) == n
            and self.X.shape == (n, len(self.feature_names))
        ):
            raise InvalidInputError("landmark frame columns disagree on length")

    def __len__(self) -> int:
        return len(self.admission_id)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def subset(self, index) -> "LandmarkFrame":
        return LandmarkFrame(
            self.admission_id[index],
            self.episode_id[index],
            self.lm[index],
            self.X[index],
            list(self.feature_names),
            self.event_type[index],
            self.event_time[index],
        )

    def copy(self) -> "LandmarkFrame":
        return LandmarkFrame(
            self.admission_id.copy(),
            self.episode_id.copy(),
            self.lm.copy(),
            self.X.copy(),
            list(self.feature_names),
            self.event_type.copy(),
            self.event_time.copy(),
        )

    @classmethod
    def from_rows(
        cls, rows: Sequence[LandmarkRow], feature_names: Sequence[str] | None = None
    ) -> "LandmarkFrame":
        if feature_names is None:
            seen: dict[str, None] = {}
            for row in rows:
                for name in row.covariates:
                    seen.setdefault(name)
            feature_names = list(seen)
        n = len(rows)
        X = np.full((n, len(feature_names)), np.nan)
        for i, row in enumerate(rows):
            for j, name in enumerate(feature_names):
                if name in row.covariates:
                    X[i, j] = row.covariates[name]
        return cls(
            np.array([r.admission_id for r in rows], dtype=object),
            np.array([r.episode_id for r in rows], dtype=np.int64),
            np.array([r.lm for r in rows], dtype=np.int64),
            X,
            list(feature_names),
            np.array([int(r.event_type) for r in rows], dtype=np.int64),
            np.array([r.event_time for r in rows], dtype=float),
        )

    def to_rows(self) -> list[LandmarkRow]:
        out = []
        for i in range(len(self)):
            cov = {
                name: float(self.X[i, j])
                for j, name in enumerate(self.feature_names)
                if not np.isnan(self.X[i, j])
            }
            out.append(
                LandmarkRow(
                    str(self.admission_id[i]),
                    int(self.episode_id[i]),
                    int(self.lm[i]),
                    cov,
                    EventType(int(self.event_type[i])),
                    float(self.event_time[i]),
                )
            )
        return out


def _format_float(value: float) -> str:
    return repr(float(value))


def write_landmark_csv(frame: LandmarkFrame, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(ID_COLUMNS) + frame.feature_names + list(OUTCOME_COLUMNS))
        for i in range(len(frame)):
            feats = [
                "" if np.isnan(v) else _format_float(v) for v in frame.X[i]
            ]
            writer.writerow(
                [
                    str(frame.admission_id[i]),
                    str(int(frame.episode_id[i])),
                    str(int(frame.lm[i])),
                    *feats,
                    EVENT_NAMES[EventType(int(frame.event_type[i]))],
                    _format_float(frame.event_time[i]),
                ]
            )


def read_landmark_csv(path) -> LandmarkFrame:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{path}: empty cohort file") from None
        if header[:3] != list(ID_COLUMNS) or header[-2:] != list(OUTCOME_COLUMNS):
            raise InvalidInputError(
                f"{path}: header must be admission_id,episode_id,lm,<features...>,event_type,event_time"
            )
        feature_names = header[3:-2]
        adm, epi, lms, feats, etypes, etimes = [], [], [], [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise InvalidInputError(f"{path}:{lineno}: wrong field count")
            try:
                epi.append(int(rec[1]))
                lms.append(int(rec[2]))
                etimes.append(float(rec[-1]))
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}") from None
            name = rec[-2]
            if name not in EVENT_CODES or name == "Censored":
                raise InvalidInputError(f"{path}:{lineno}: unknown event_type {name!r}")
            etypes.append(int(EVENT_CODES[name]))
            adm.append(rec[0])
            row_feats = []
            for v in rec[3:-2]:
                if v in MISSING_TOKENS:
                    row_feats.append(np.nan)
                else:
                    try:
                        row_feats.append(float(v))
                    except ValueError:
                        raise InvalidInputError(
                            f"{path}:{lineno}: bad feature value {v!r}"
                        ) from None
            feats.append(row_feats)
    n = len(adm)
    X = np.array(feats, dtype=float) if n else np.empty((0, len(feature_names)))
    return LandmarkFrame(
        np.array(adm, dtype=object),
        np.array(epi, dtype=np.int64),
        np.array(lms, dtype=np.int64),
        X.reshape(n, len(feature_names)),
        feature_names,
        np.array(etypes, dtype=np.int64),
        np.array(etimes, dtype=float),
    )


def split_by_admission(
    frame: LandmarkFrame, ratio: float, seed: int
) -> tuple[LandmarkFrame, LandmarkFrame]:
    """Disjoint train/test split on whole admissions."""
    if not (0.0 < ratio < 1.0):
        raise InvalidInputError("ratio must lie strictly between 0 and 1")
    admissions = np.unique(frame.admission_id.astype(str))
    if admissions.size < 2:
        raise InvalidInputError("need at least 2 admissions to split")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(admissions.size)
    n_train = int(math.floor(ratio * admissions.size + 0.5))
    n_train = min(max(n_train, 1), admissions.size - 1)
    train_set = set(admissions[perm[:n_train]])
    mask = np.array([a in train_set for a in frame.admission_id.astype(str)])
    return frame.subset(mask), frame.subset(~mask)


# ---------------------------------------------------------------------------
# Missing-value handling, fitted on training rows only.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImputePolicy:
    method: str  # mean | mode | fixed | locf
    value: float | None = None


class Imputer:
    """Per-feature fill rules with constants learned from training rows."""

    def __init__(self, policies: dict[str, ImputePolicy], fill: dict[str, float]):
        self.policies = policies
        self.fill = fill

    def transform(self, frame: LandmarkFrame) -> LandmarkFrame:
        out = frame.copy()
        for j, name in enumerate(out.feature_names):
            policy = self.policies.get(name)
            if policy is None:
                continue
            col = out.X[:, j]
            if policy.method == "locf":
                order = np.lexsort((out.lm, out.episode_id, out.admission_id.astype(str)))
                key_prev = None
                last = np.nan
                for i in order:
                    key = (out.admission_id[i], out.episode_id[i])
                    if key != key_prev:
                        last = np.nan
                        key_prev = key
                    if np.isnan(col[i]):
                        col[i] = self.fill[name] if np.isnan(last) else last
                    else:
                        last = col[i]
            else:
                col[np.isnan(col)] = self.fill[name]
        return out


def fit_imputer(frame: LandmarkFrame, policies: Mapping[str, ImputePolicy]) -> Imputer:
    fill: dict[str, float] = {}
    for name, policy in policies.items():
        if name not in frame.feature_names:
            raise InvalidInputError(f"unknown feature {name!r} in imputation policy")
        j = frame.feature_names.index(name)
        col = frame.X[:, j]
        observed = col[~np.isnan(col)]
        if policy.method == "fixed":
            if policy.value is None:
                raise InvalidInputError(f"fixed imputation for {name!r} needs a value")
            fill[name] = float(policy.value)
            continue
        if observed.size == 0:
            raise InvalidInputError(f"feature {name!r} has no observed training values")
        if policy.method == "mean" or policy.method == "locf":
            fill[name] = float(observed.mean())
        elif policy.method == "mode":
            values, counts = np.unique(observed, return_counts=True)
            fill[name] = float(values[np.argmax(counts)])
        else:
            raise InvalidInputError(f"unknown imputation method {policy.method!r}")
    return Imputer(dict(policies), fill)
