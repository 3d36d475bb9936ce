import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from barnsim.scoring import (
    CSV_COLUMNS,
    SCORE_UPPER,
    Outcome,
    TrialRecord,
    aggregate,
    optimal_time,
    records_from_csv,
    records_to_csv,
    score_trial,
)

pos = st.floats(1e-3, 1e3, allow_nan=False, allow_infinity=False)


def test_optimal_time_examples():
    assert optimal_time(10.0, 2.0) == 5.0
    assert optimal_time(5.0, 2.0) == 2.5
    assert optimal_time(5.0) == 2.5  # default platform max speed
    assert optimal_time(14.0) == 2 * optimal_time(7.0)
    for bad in ((0.0, 2.0), (-1.0, 2.0), (1.0, 0.0), (float("nan"), 2.0)):
        with pytest.raises(ValueError):
            optimal_time(*bad)


def test_score_examples():
    assert score_trial("success", 25.0, 5.0) == pytest.approx(0.2, abs=1e-12)
    assert score_trial("success", 10.0, 5.0) == pytest.approx(0.25, abs=1e-12)
    assert score_trial("success", 100.0, 5.0) == pytest.approx(0.125, abs=1e-12)
    assert score_trial("collision", 12.0, 5.0) == 0.0
    assert score_trial("timeout", 100.0, 5.0) == 0.0
    assert score_trial(Outcome.ERROR, 3.0, 5.0) == 0.0
    with pytest.raises(ValueError):
        score_trial("success", 0.0, 5.0)
    with pytest.raises(ValueError):
        score_trial("crash", 1.0, 5.0)


def test_clip_bounds_are_configurable():
    assert score_trial("success", 20.0, 5.0, clip_low=3.0, clip_high=6.0) == pytest.approx(0.25)
    assert score_trial("success", 1.0, 5.0, clip_low=3.0, clip_high=6.0) == pytest.approx(1 / 3)


@settings(max_examples=300)
@given(pos, pos, st.sampled_from(list(Outcome)))
def test_score_range_and_zero_iff_failure(at, ot, outcome):
    s = score_trial(outcome, at, ot)
    if outcome is Outcome.SUCCESS:
        assert 0.125 - 1e-15 <= s <= SCORE_UPPER + 1e-15
        if at <= 4 * ot:
            assert s == ot / (4 * ot)
        else:
            assert s < 0.25
    else:
        assert s == 0.0


@settings(max_examples=300)
@given(pos, pos, pos)
def test_score_non_increasing_in_at(ot, a, b):
    lo, hi = sorted((a, b))
    assert score_trial("success", hi, ot) <= score_trial("success", lo, ot)
    # strictly decreasing inside the clip window
    x, y = 4 * ot + (lo / (lo + hi + 1)) * 4 * ot, 4 * ot + (hi / (lo + hi + 1)) * 4 * ot
    if y - x > 1e-9 * ot:
        assert score_trial("success", y, ot) < score_trial("success", x, ot)


@settings(max_examples=300)
@given(pos, pos, st.floats(1e-3, 1e3))
def test_score_scale_invariant(at, ot, c):
    assert score_trial("success", c * at, c * ot) == pytest.approx(score_trial("success", at, ot), rel=1e-12)


def test_trial_record_scored_handles_zero_at():
    r = TrialRecord.scored(1, 7, "collision", 0.0, 5.0)
    assert r.score == 0.0 and not r.success and r.outcome is Outcome.COLLISION
    r = TrialRecord.scored(1, 7, "success", 10.0, 5.0)
    assert r.score == pytest.approx(0.25) and r.success


def make(env, trial, outcome, at, ot):
    return TrialRecord.scored(env, 100 * env + trial, outcome, at, ot, trial)


# three envs x two trials, scores worked out by hand:
#   env 0: success AT=8 OT=2 -> 2/8 = 0.25;      success AT=12 OT=2 -> 2/12
#   env 1: collision -> 0;                       success AT=30 OT=3 -> 3/24 = 0.125
#   env 2: success AT=15 OT=2.5 -> 2.5/15 = 1/6;  timeout -> 0
HAND = [
    make(0, 0, "success", 8.0, 2.0),
    make(0, 1, "success", 12.0, 2.0),
    make(1, 0, "collision", 4.0, 3.0),
    make(1, 1, "success", 30.0, 3.0),
    make(2, 0, "success", 15.0, 2.5),
    make(2, 1, "timeout", 100.0, 2.5),
]
HAND_OVERALL = (0.25 + 1 / 6 + 0 + 0.125 + 1 / 6 + 0) / 6


def test_aggregate_hand_fixture():
    rep = aggregate(HAND, {0: 2, 1: 2, 2: 2})
    assert abs(rep.overall - HAND_OVERALL) <= 1e-12
    assert rep.per_env[0] == pytest.approx((0.25 + 1 / 6) / 2, abs=1e-12)
    assert rep.per_env[1] == pytest.approx(0.0625, abs=1e-12)
    assert rep.per_env[2] == pytest.approx(1 / 12, abs=1e-12)
    assert rep.success_rate == pytest.approx(4 / 6)
    assert rep.outcome_counts == {"success": 4, "collision": 1, "timeout": 1}
    assert rep.complete and rep.missing == []
    assert rep.at_percentiles["p100"] == 100.0 and rep.at_percentiles["p50"] == pytest.approx(13.5)


def test_aggregate_constant_cases():
    assert aggregate([make(e, i, "success", 4.0, 1.0) for e in range(3) for i in range(4)]).overall == 0.25
    fails = aggregate([make(e, i, "collision", 1.0, 1.0) for e in range(3) for i in range(4)])
    assert fails.overall == 0.0 and fails.success_rate == 0.0


def test_aggregate_is_permutation_invariant():
    recs = HAND * 3
    base = aggregate(recs).summary_text()
    for seed in range(5):
        shuffled = recs[:]
        random.Random(seed).shuffle(shuffled)
        assert aggregate(shuffled).summary_text() == base


def test_missing_trials_flag_incomplete_coverage():
    rep = aggregate(HAND[:-1], {0: 2, 1: 2, 2: 2})
    assert not rep.complete and rep.missing == [(2, 1)]
    assert json.loads(rep.summary_text())["missing"] == [[2, 1]]
    rep = aggregate(HAND, {0: 2, 1: 2, 2: 2}, skipped_envs={3: "generation failed"})
    assert not rep.complete and rep.summary()["skipped_envs"] == {"3": "generation failed"}


def test_summary_range_invariants():
    rep = aggregate(HAND)
    assert 0.0 <= rep.overall <= 0.25 and 0.0 <= rep.success_rate <= 1.0
    s = rep.summary()
    assert s["overall_score"] == f"{HAND_OVERALL:.6f}" and s["trials"] == 6


def test_csv_layout_and_round_trip():
    text = records_to_csv(HAND)
    lines = text.splitlines()
    assert lines[0].split(",")[:6] == list(CSV_COLUMNS)
    assert lines[1] == "0,0,success,8.000000,2.000000,0.250000,0"
    back = records_from_csv(text)
    assert [(r.env_id, r.seed, r.outcome, r.trial_index) for r in back] == [(r.env_id, r.seed, r.outcome, r.trial_index) for r in HAND]
    assert records_to_csv(back) == text
    # rescoring with other clip bounds changes only the score column
    other = records_from_csv(text, clip_low=2.0, clip_high=3.0)
    assert other[0].score == pytest.approx(2 / 6)
    raw = records_from_csv(text, rescore=False)
    assert [r.score for r in raw] == [float(f"{r.score:.6f}") for r in HAND]


def test_report_write(tmp_path):
    csv_path, sum_path = aggregate(HAND).write(tmp_path / "r")
    assert csv_path.read_text() == records_to_csv(HAND)
    assert math.isclose(float(json.loads(sum_path.read_text())["overall_score"]), HAND_OVERALL, abs_tol=1e-6)
