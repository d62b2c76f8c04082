"""Cohort assembly, outcome encodings and I/O."""

from __future__ import annotations

import numpy as np
import pytest

from lmforest.cohort import (
    CatheterEpisode,
    CatheterInterval,
    CensorScheme,
    EventType,
    ImputePolicy,
    LandmarkFrame,
    LandmarkRow,
    TimeToEvent,
    administrative_censor,
    assemble_episodes,
    binary_labels,
    build_landmarks,
    discretize_time,
    discretize_times,
    fit_imputer,
    label_binary,
    label_multinomial,
    landmark_grid,
    multinomial_labels,
    read_landmark_csv,
    split_by_admission,
    to_competing_risks,
    to_survival,
    write_landmark_csv,
)
from lmforest.errors import InvalidInputError


def make_row(event_type=EventType.CLABSI, event_time=9.7, lm=0, **cov):
    return LandmarkRow("a1", 1, lm, cov, event_type, event_time)


class TestAssembleEpisodes:
    def test_short_gap_merges(self):
        intervals = [
            CatheterInterval("a", 0.0, 3.0),
            CatheterInterval("a", 3.5, 9.0),
        ]
        eps = assemble_episodes(intervals, {"a": (EventType.DISCHARGE, 12.0)})
        assert len(eps) == 1
        # admission event at 12 is past the window 9 + 2: discharge at removal + 48h
        assert eps[0].event_type is EventType.DISCHARGE
        assert eps[0].event_time == 11.0
        assert eps[0].start == 0.0

    def test_long_gap_splits(self):
        intervals = [
            CatheterInterval("a", 0.0, 3.0),
            CatheterInterval("a", 6.0, 9.0),
        ]
        eps = assemble_episodes(intervals, {"a": (EventType.DISCHARGE, 15.0)})
        assert [e.episode_id for e in eps] == [1, 2]
        assert eps[0].event_type is EventType.DISCHARGE
        assert eps[0].event_time == 5.0  # window closes at 3 + 2
        assert eps[1].start == 6.0
        assert eps[1].event_time == 5.0  # 11 - 6

    def test_gap_of_exactly_48h_splits(self):
        intervals = [
            CatheterInterval("a", 0.0, 3.0),
            CatheterInterval("a", 5.0, 6.0),
        ]
        eps = assemble_episodes(intervals, {"a": (EventType.DISCHARGE, 20.0)})
        assert len(eps) == 2

    def test_death_inside_window_is_terminal(self):
        eps = assemble_episodes(
            [CatheterInterval("a", 0.0, 4.0)], {"a": (EventType.DEATH, 3.0)}
        )
        assert eps[0].event_type is EventType.DEATH
        assert eps[0].event_time == 3.0

    def test_clabsi_in_posthoc_window(self):
        eps = assemble_episodes(
            [CatheterInterval("a", 0.0, 4.0)], {"a": (EventType.CLABSI, 5.5)}
        )
        assert eps[0].event_type is EventType.CLABSI
        assert eps[0].event_time == 5.5

    def test_relative_times_for_late_episode(self):
        eps = assemble_episodes(
            [CatheterInterval("a", 10.0, 12.0)], {"a": (EventType.DEATH, 13.0)}
        )
        assert eps[0].start == 10.0
        assert eps[0].event_time == 3.0

    def test_input_order_does_not_matter(self):
        intervals = [
            CatheterInterval("a", 6.0, 9.0),
            CatheterInterval("b", 1.0, 2.0),
            CatheterInterval("a", 0.0, 3.0),
        ]
        events = {"a": (EventType.DISCHARGE, 15.0), "b": (EventType.DEATH, 3.5)}
        eps1 = assemble_episodes(intervals, events)
        eps2 = assemble_episodes(list(reversed(intervals)), events)
        assert eps1 == eps2

    def test_rejects_zero_length_interval(self):
        with pytest.raises(InvalidInputError):
            assemble_episodes([CatheterInterval("a", 2.0, 2.0)], {})

    def test_rejects_event_before_episode(self):
        with pytest.raises(InvalidInputError):
            assemble_episodes(
                [CatheterInterval("a", 5.0, 8.0)], {"a": (EventType.DEATH, 4.0)}
            )


class TestLandmarkGrid:
    @pytest.mark.parametrize(
        "event_time,expected",
        [
            (9.7, list(range(10))),
            (2.5, [0, 1, 2]),
            (3.0, [0, 1, 2]),  # landmark at the event time is excluded
            (0.8, [0]),
            (1.0, [0]),
            (1.2, [0, 1]),
        ],
    )
    def test_grid(self, event_time, expected):
        assert landmark_grid(event_time) == expected

    def test_stacked_rows(self):
        episodes = [
            CatheterEpisode("1", 1, 0.0, EventType.CLABSI, 9.7),
            CatheterEpisode("1", 2, 12.0, EventType.DEATH, 1.2),
            CatheterEpisode("2", 1, 0.0, EventType.DISCHARGE, 3.5),
        ]
        cov = {("1", 1): {"x": 1.0}, ("1", 2): {"x": 2.0}, ("2", 1): {"x": 3.0}}
        rows = build_landmarks(episodes, cov)
        counts = {}
        for r in rows:
            counts[(r.admission_id, r.episode_id)] = counts.get((r.admission_id, r.episode_id), 0) + 1
            assert r.lm < r.event_time
        assert counts == {("1", 1): 10, ("1", 2): 2, ("2", 1): 4}
        assert all(r.covariates == {"x": 1.0} for r in rows if (r.admission_id, r.episode_id) == ("1", 1))


class TestLabels:
    def test_binary_examples(self):
        assert label_binary(make_row(EventType.CLABSI, 6.9), 7) == 1
        assert label_binary(make_row(EventType.CLABSI, 7.0), 7) == 1
        assert label_binary(make_row(EventType.CLABSI, 7.5), 7) == 0
        assert label_binary(make_row(EventType.DEATH, 3.0), 7) == 0
        assert label_binary(make_row(EventType.CLABSI, 9.7, lm=3), 7) == 1

    def test_multinomial_examples(self):
        assert label_multinomial(make_row(EventType.DEATH, 2.0), 7) == int(EventType.DEATH)
        assert label_multinomial(make_row(EventType.DISCHARGE, 6.0), 7) == int(EventType.DISCHARGE)
        assert label_multinomial(make_row(EventType.CLABSI, 9.0), 7) == 0
        assert label_multinomial(make_row(EventType.CLABSI, 9.0, lm=4), 7) == int(EventType.CLABSI)

    def test_binary_iff_multinomial_clabsi(self):
        rng = np.random.default_rng(7)
        n = 500
        etype = rng.integers(1, 4, size=n)
        lm = rng.integers(0, 5, size=n)
        etime = lm + rng.uniform(0.01, 12.0, size=n)
        b = binary_labels(etype, etime, lm, 7.0)
        m = multinomial_labels(etype, etime, lm, 7.0)
        assert np.array_equal(b == 1, m == int(EventType.CLABSI))


class TestTimeTransforms:
    def test_at_event_time_censors_competing_where_it_happened(self):
        t = to_survival(make_row(EventType.DISCHARGE, 5.0), CensorScheme.AT_EVENT_TIME, 7)
        assert t == TimeToEvent(5.0, 0)

    def test_at_horizon_pushes_competing_to_horizon(self):
        t = to_survival(make_row(EventType.DISCHARGE, 5.0), CensorScheme.AT_HORIZON, 7)
        assert t == TimeToEvent(7.0, 0)

    def test_at_horizon_keeps_late_competing_location(self):
        t = to_survival(make_row(EventType.DISCHARGE, 9.5), CensorScheme.AT_HORIZON, 7)
        assert t == TimeToEvent(9.5, 0)

    def test_clabsi_is_always_an_event(self):
        for scheme in CensorScheme:
            t = to_survival(make_row(EventType.CLABSI, 4.2), scheme, 7)
            assert t == TimeToEvent(4.2, 1)

    def test_competing_risks_keeps_cause(self):
        t = to_competing_risks(make_row(EventType.DEATH, 1.2))
        assert t == TimeToEvent(1.2, int(EventType.DEATH))

    def test_residual_uses_landmark(self):
        t = to_competing_risks(make_row(EventType.CLABSI, 9.7, lm=3))
        assert t.time == pytest.approx(6.7)

    def test_discretize_is_ceiling(self):
        assert discretize_time(TimeToEvent(6.1, 1)) == TimeToEvent(7.0, 1)
        assert discretize_time(TimeToEvent(7.0, 1)) == TimeToEvent(7.0, 1)
        assert discretize_time(TimeToEvent(0.2, 3)) == TimeToEvent(1.0, 3)

    def test_discretize_rejects_nonpositive(self):
        with pytest.raises(InvalidInputError):
            discretize_times(np.array([0.0]))

    def test_administrative_censor(self):
        assert administrative_censor(TimeToEvent(8.2, 1), 7) == TimeToEvent(7.0, 0)
        assert administrative_censor(TimeToEvent(7.0, 1), 7) == TimeToEvent(7.0, 1)
        assert administrative_censor(TimeToEvent(3.0, 2), 7) == TimeToEvent(3.0, 2)


def toy_frame(n_adm=9, rows_per_adm=2, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for a in range(n_adm):
        for e in range(1, rows_per_adm + 1):
            rows.append(
                LandmarkRow(
                    f"adm{a:03d}",
                    e,
                    0,
                    {"x1": float(rng.normal()), "x2": float(rng.integers(0, 2))},
                    EventType.DISCHARGE,
                    float(rng.uniform(0.5, 9.0)),
                )
            )
    return LandmarkFrame.from_rows(rows)


class TestSplit:
    def test_nine_admissions_two_thirds(self):
        frame = toy_frame(n_adm=9)
        train, test = split_by_admission(frame, 2 / 3, seed=11)
        train_adm = set(train.admission_id)
        test_adm = set(test.admission_id)
        assert len(train_adm) == 6 and len(test_adm) == 3
        assert train_adm.isdisjoint(test_adm)
        assert len(train) + len(test) == len(frame)

    def test_same_seed_same_split(self):
        frame = toy_frame(n_adm=20, seed=3)
        a1, b1 = split_by_admission(frame, 0.5, seed=42)
        a2, b2 = split_by_admission(frame, 0.5, seed=42)
        assert np.array_equal(a1.admission_id, a2.admission_id)
        assert np.array_equal(b1.X, b2.X)

    def test_different_seed_usually_differs(self):
        frame = toy_frame(n_adm=20, seed=3)
        a1, _ = split_by_admission(frame, 0.5, seed=1)
        a2, _ = split_by_admission(frame, 0.5, seed=2)
        assert set(a1.admission_id) != set(a2.admission_id)

    def test_rejects_single_admission(self):
        frame = toy_frame(n_adm=1)
        with pytest.raises(InvalidInputError):
            split_by_admission(frame, 0.5, seed=0)


class TestImputer:
    def frame_with_missing(self):
        rows = [
            LandmarkRow("a", 1, 0, {"x": 1.0, "b": 0.0}, EventType.DISCHARGE, 4.0),
            LandmarkRow("a", 1, 1, {"b": 1.0}, EventType.DISCHARGE, 4.0),
            LandmarkRow("a", 1, 2, {"x": 3.0}, EventType.DISCHARGE, 4.0),
            LandmarkRow("a", 1, 3, {}, EventType.DISCHARGE, 4.0),
            LandmarkRow("b", 1, 0, {"x": 5.0, "b": 1.0}, EventType.DEATH, 1.0),
        ]
        return LandmarkFrame.from_rows(rows, feature_names=["x", "b"])

    def test_mean_and_mode(self):
        frame = self.frame_with_missing()
        imp = fit_imputer(frame, {"x": ImputePolicy("mean"), "b": ImputePolicy("mode")})
        out = imp.transform(frame)
        assert out.X[1, 0] == pytest.approx(3.0)  # mean of 1, 3, 5
        # b observed values 0, 1, 1: mode 1
        assert out.X[2, 1] == 1.0

    def test_mode_tie_takes_smaller_value(self):
        rows = [
            LandmarkRow("a", 1, 0, {"b": 1.0}, EventType.DISCHARGE, 2.0),
            LandmarkRow("a", 1, 1, {"b": 0.0}, EventType.DISCHARGE, 2.0),
            LandmarkRow("b", 1, 0, {}, EventType.DISCHARGE, 2.0),
        ]
        frame = LandmarkFrame.from_rows(rows, feature_names=["b"])
        imp = fit_imputer(frame, {"b": ImputePolicy("mode")})
        assert imp.transform(frame).X[2, 0] == 0.0

    def test_locf_within_episode_with_mean_fallback(self):
        frame = self.frame_with_missing()
        imp = fit_imputer(frame, {"x": ImputePolicy("locf")})
        out = imp.transform(frame)
        assert out.X[1, 0] == 1.0  # carried from lm 0
        assert out.X[3, 0] == 3.0  # carried from lm 2
        rows = [
            LandmarkRow("c", 1, 0, {}, EventType.DISCHARGE, 3.0),
            LandmarkRow("c", 1, 1, {"x": 9.0}, EventType.DISCHARGE, 3.0),
        ]
        test = LandmarkFrame.from_rows(rows, feature_names=["x", "b"])
        filled = imp.transform(test)
        assert filled.X[0, 0] == pytest.approx(3.0)  # training mean, nothing to carry
        assert filled.X[1, 0] == 9.0

    def test_fixed_value(self):
        frame = self.frame_with_missing()
        imp = fit_imputer(frame, {"x": ImputePolicy("fixed", value=-1.0)})
        assert imp.transform(frame).X[1, 0] == -1.0

    def test_train_statistics_are_reused_bit_exactly(self):
        train = self.frame_with_missing()
        imp = fit_imputer(train, {"x": ImputePolicy("mean")})
        rows = [LandmarkRow("z", 1, 0, {}, EventType.DISCHARGE, 2.0)]
        test = LandmarkFrame.from_rows(rows, feature_names=["x", "b"])
        assert imp.transform(test).X[0, 0] == imp.fill["x"]

    def test_all_missing_feature_rejected(self):
        rows = [LandmarkRow("a", 1, 0, {}, EventType.DISCHARGE, 2.0)]
        frame = LandmarkFrame.from_rows(rows, feature_names=["x"])
        with pytest.raises(InvalidInputError):
            fit_imputer(frame, {"x": ImputePolicy("mean")})


class TestCsvContract:
    def test_round_trip_values_and_bytes(self, tmp_path):
        frame = toy_frame(n_adm=5, seed=9)
        frame.X[2, 0] = np.nan
        path = tmp_path / "cohort.csv"
        write_landmark_csv(frame, path)
        back = read_landmark_csv(path)
        assert back.feature_names == frame.feature_names
        assert np.array_equal(back.admission_id, frame.admission_id)
        assert np.array_equal(back.X, frame.X, equal_nan=True)
        assert np.array_equal(back.event_time, frame.event_time)
        path2 = tmp_path / "again.csv"
        write_landmark_csv(back, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_na_token_reads_as_missing(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text(
            "admission_id,episode_id,lm,x,event_type,event_time\n"
            "a,1,0,NA,CLABSI,2.5\n"
            "a,1,1,,CLABSI,2.5\n"
        )
        frame = read_landmark_csv(path)
        assert np.isnan(frame.X).all()
        assert frame.event_type[0] == int(EventType.CLABSI)

    def test_malformed_header_rejected(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text("id,episode_id,lm,event_type,event_time\na,1,0,CLABSI,2.0\n")
        with pytest.raises(InvalidInputError):
            read_landmark_csv(path)

    def test_unknown_event_type_rejected(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text(
            "admission_id,episode_id,lm,x,event_type,event_time\na,1,0,1.0,Transfer,2.0\n"
        )
        with pytest.raises(InvalidInputError):
            read_landmark_csv(path)
