import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import due_oracle, on_ms_oracle, threat_oracle
from wiswitch.ledger import (
    DAY_MS,
    MINUTE_MS,
    BadRange,
    Schedule,
    ScheduleAction,
    WindowTooLarge,
    detect_threat,
    due_actions,
    parse_occupancy_body,
    parse_schedule_body,
    total_on_time,
)
from wiswitch.protocol import Cause, SchemaViolation, StatusReport, SwitchState

ON, OFF = SwitchState.ON, SwitchState.OFF


class TestOnTime:
    def test_single_closed_interval(self):
        assert total_on_time([(0, ON), (10, OFF)], 0, 10) == 10

    def test_no_reports_is_zero(self):
        assert total_on_time([], 0, 10**6) == 0

    def test_worked_example(self):
        timeline = [(0, ON), (3, ON), (7, OFF), (9, ON)]
        assert on_ms_oracle(timeline, 0, 12) == 10  # oracle first
        assert total_on_time(timeline, 0, 12) == 10

    def test_state_carried_in_from_before_window(self):
        assert total_on_time([(2, ON)], 5, 8) == 3
        assert total_on_time([(2, ON), (4, OFF)], 5, 8) == 0

    def test_trailing_on_extends_to_window_end(self):
        assert total_on_time([(1, ON)], 0, 100) == 99

    def test_report_at_window_end_excluded(self):
        assert total_on_time([(10, ON)], 0, 10) == 0

    def test_ties_resolve_to_later_entry(self):
        assert total_on_time([(5, ON), (5, OFF)], 0, 10) == 0
        assert total_on_time([(5, OFF), (5, ON)], 0, 10) == 5

    def test_bad_range(self):
        with pytest.raises(BadRange):
            total_on_time([], 10, 5)

    def test_matches_oracle_on_random_logs(self):
        rng = random.Random(42)
        for _ in range(200):
            timeline = [
                (rng.randint(0, 2000), rng.choice((ON, OFF)))
                for _ in range(rng.randint(0, 30))
            ]
            frm = rng.randint(0, 2000)
            to = rng.randint(frm, 2000)
            assert total_on_time(timeline, frm, to) == on_ms_oracle(timeline, frm, to)

    @given(
        st.lists(st.tuples(st.integers(0, 500), st.sampled_from((ON, OFF))), max_size=20),
        st.integers(0, 250),
        st.integers(0, 250),
    )
    def test_additive_over_adjacent_windows(self, timeline, a_len, b_len):
        a, b, c = 0, a_len, a_len + b_len
        whole = total_on_time(timeline, a, c)
        assert whole == total_on_time(timeline, a, b) + total_on_time(timeline, b, c)

    @given(
        st.lists(st.tuples(st.integers(0, 500), st.sampled_from((ON, OFF))), max_size=20),
        st.integers(0, 500),
        st.integers(0, 100),
    )
    def test_monotone_in_window_size(self, timeline, to, extra):
        assert total_on_time(timeline, 0, to + extra) >= total_on_time(timeline, 0, to)


def report(state=ON, at=500, cause=None, device="lamp-1"):
    return StatusReport(device, state, at, cause or Cause.local())


class TestThreatDetection:
    def test_on_inside_away_window(self):
        assert detect_threat(report(ON, 500), [(0, 1000)]) == (0, 1000)

    def test_off_never_alarms(self):
        assert detect_threat(report(OFF, 500), [(0, 1000)]) is None

    def test_end_boundary_excluded(self):
        assert detect_threat(report(ON, 1000), [(0, 1000)]) is None

    def test_start_boundary_included(self):
        assert detect_threat(report(ON, 0), [(0, 1000)]) == (0, 1000)

    def test_cloud_cause_alarms_by_default(self):
        assert detect_threat(report(ON, 500, Cause.cloud("c1")), [(0, 1000)]) is not None

    def test_local_only_narrows_to_lan_causes(self):
        away = [(0, 1000)]
        assert detect_threat(report(ON, 500, Cause.cloud("c1")), away, local_only=True) is None
        assert detect_threat(report(ON, 500, Cause.boot()), away, local_only=True) is None
        assert detect_threat(report(ON, 500, Cause.local()), away, local_only=True) == (0, 1000)

    def test_overlapping_windows_union_semantics(self):
        away = [(100, 300), (200, 500)]
        assert detect_threat(report(ON, 350), away) == (200, 500)

    def test_matches_oracle_on_random_pairs(self):
        rng = random.Random(7)
        for _ in range(300):
            windows = []
            for _ in range(rng.randint(0, 5)):
                start = rng.randint(0, 9_000)
                windows.append((start, start + rng.randint(1, 1_000)))
            r = report(
                rng.choice((ON, OFF)),
                rng.randint(0, 10_000),
                rng.choice([Cause.local(), Cause.boot(), Cause.cloud("c")]),
            )
            assert (detect_threat(r, windows) is not None) == threat_oracle(r, windows)


def daily(minute, state=ON):
    return ScheduleAction(minute_of_day=minute, days=frozenset(range(7)), state=state)


class TestDueActions:
    def test_single_containment(self):
        schedule = Schedule("lamp-1", (daily(18 * 60),))
        fire_ms = 18 * 60 * MINUTE_MS
        got = due_actions(schedule, fire_ms - MINUTE_MS, fire_ms + MINUTE_MS, 0)
        assert got == [(fire_ms, ON, 0)]

    def test_zero_length_window_is_empty(self):
        schedule = Schedule("lamp-1", (daily(0),))
        assert due_actions(schedule, 1000, 1000, 0) == []

    def test_already_fired_not_repeated(self):
        schedule = Schedule("lamp-1", (daily(18 * 60),))
        fire_ms = 18 * 60 * MINUTE_MS
        assert due_actions(schedule, fire_ms + MINUTE_MS, fire_ms + 2 * MINUTE_MS, 0) == []

    def test_window_end_inclusive_start_exclusive(self):
        schedule = Schedule("lamp-1", (daily(0),))
        assert due_actions(schedule, 0, DAY_MS, 0) == [(DAY_MS, ON, 0)]

    def test_daily_action_fires_once_per_day(self):
        schedule = Schedule("lamp-1", (daily(6 * 60, OFF),))
        got = due_actions(schedule, 0, 3 * DAY_MS, 0)
        assert [g[0] for g in got] == [d * DAY_MS + 6 * 60 * MINUTE_MS for d in range(3)]

    def test_weekly_action_over_chained_windows(self):
        monday_only = ScheduleAction(0, frozenset({0}), ON)
        schedule = Schedule("lamp-1", (monday_only,))
        # epoch day 0 is a Thursday; day 4 is the first Monday
        hits = []
        for start in range(0, 10 * DAY_MS, 5 * DAY_MS):
            window = due_actions(schedule, start, start + 5 * DAY_MS, 0)
            assert window == due_oracle(schedule, start, start + 5 * DAY_MS, 0)
            hits += window
        assert [h[0] // DAY_MS for h in hits] == [4]  # one Monday midnight in 10 days

    def test_timezone_offset_shifts_fire_time(self):
        schedule = Schedule("lamp-1", (daily(0),))
        # +60 min local offset: local midnight happens 60 min earlier in UTC
        got = due_actions(schedule, 0, DAY_MS, 60)
        assert got == [(DAY_MS - 60 * MINUTE_MS, ON, 0)]

    def test_bad_range(self):
        with pytest.raises(BadRange):
            due_actions(Schedule("lamp-1", ()), 10, 5, 0)

    def test_window_too_large(self):
        with pytest.raises(WindowTooLarge):
            due_actions(Schedule("lamp-1", ()), 0, 8 * DAY_MS, 0)

    def test_matches_oracle_on_random_windows(self):
        rng = random.Random(99)
        for _ in range(100):
            actions = tuple(
                ScheduleAction(
                    minute_of_day=rng.randint(0, 1439),
                    days=frozenset(rng.sample(range(7), rng.randint(1, 7))),
                    state=rng.choice((ON, OFF)),
                )
                for _ in range(rng.randint(1, 3))
            )
            schedule = Schedule("lamp-1", actions)
            prev = rng.randint(0, 30 * DAY_MS)
            now = prev + rng.randint(0, 7 * DAY_MS)
            offset = rng.randint(-720, 840)
            assert due_actions(schedule, prev, now, offset) == due_oracle(schedule, prev, now, offset)


class TestBodyParsing:
    def test_occupancy_round_trip(self):
        body = {"away": [{"from": 10, "to": 20}, {"from": 15, "to": 40}]}
        assert parse_occupancy_body(body) == [(10, 20), (15, 40)]

    def test_occupancy_empty_list_allowed(self):
        assert parse_occupancy_body({"away": []}) == []

    @pytest.mark.parametrize(
        "body",
        [
            {},
            {"away": [{"from": 20, "to": 10}]},
            {"away": [{"from": 10, "to": 10}]},
            {"away": [{"from": -5, "to": 10}]},
            {"away": [{"from": 1, "to": 2, "x": 3}]},
            {"away": [{"from": 1.5, "to": 2}]},
            {"away": {"from": 1, "to": 2}},
            {"away": [], "extra": 1},
        ],
    )
    def test_occupancy_rejects_bad_bodies(self, body):
        with pytest.raises(SchemaViolation):
            parse_occupancy_body(body)

    def test_schedule_round_trip(self):
        body = {"actions": [{"minute": 1080, "days": ["mon", "tue"], "switch": "on"}]}
        schedule = parse_schedule_body("lamp-1", body)
        assert schedule.device == "lamp-1"
        assert schedule.actions == (ScheduleAction(1080, frozenset({0, 1}), ON),)

    @pytest.mark.parametrize(
        "action",
        [
            {"minute": 1440, "days": ["mon"], "switch": "on"},
            {"minute": -1, "days": ["mon"], "switch": "on"},
            {"minute": 0, "days": [], "switch": "on"},
            {"minute": 0, "days": ["monday"], "switch": "on"},
            {"minute": 0, "days": ["mon"], "switch": "On"},
            {"minute": 0, "days": ["mon"]},
            {"minute": True, "days": ["mon"], "switch": "on"},
        ],
    )
    def test_schedule_rejects_bad_actions(self, action):
        with pytest.raises(SchemaViolation):
            parse_schedule_body("lamp-1", {"actions": [action]})
