import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from healthlm import synth
from healthlm.errors import InvalidSpec, NegativeDuration, UnknownActivity
from healthlm.rng import make_rng
from healthlm.signals import RhythmLabel


def _cv(x):
    return float(np.std(x) / np.mean(x))


def _lag1(x):
    x = np.asarray(x) - np.mean(x)
    return float(np.sum(x[1:] * x[:-1]) / np.sum(x * x))


def test_nsr_cv_in_range():
    ibis = synth.gen_ibi_sequence(synth.default_rhythm_spec(RhythmLabel.NORMAL_SINUS, 1000), 0).intervals_ms
    assert 0.0375 <= _cv(ibis) <= 0.0625


def test_af_has_no_lag1_correlation():
    ibis = synth.gen_ibi_sequence(synth.default_rhythm_spec(RhythmLabel.ATRIAL_FIBRILLATION, 1000), 0).intervals_ms
    assert abs(_lag1(ibis)) < 0.1


def test_zero_cv_is_constant():
    ibis = synth.gen_ibi_sequence(synth.default_rhythm_spec(RhythmLabel.NORMAL_SINUS, 50, cv=0.0), 4)
    assert np.all(ibis.intervals_ms == 800.0)


def test_af_cv_exceeds_nsr_cv_threefold():
    ratios = []
    for seed in range(100):
        af = synth.gen_ibi_sequence(synth.default_rhythm_spec(RhythmLabel.ATRIAL_FIBRILLATION, 32), seed)
        ns = synth.gen_ibi_sequence(synth.default_rhythm_spec(RhythmLabel.NORMAL_SINUS, 32), seed)
        ratios.append(_cv(af.intervals_ms) / _cv(ns.intervals_ms))
    assert np.median(ratios) >= 3


def test_ecg_peaks_by_construction():
    ecg, peaks = synth.gen_ecg_from_ibis([1000] * 3, 125.0)
    assert list(peaks) == [0, 125, 250, 375]
    assert all(ecg.samples[p] == pytest.approx(1.0, abs=1e-9) for p in peaks)


def test_generators_are_deterministic():
    spec = synth.default_rhythm_spec(RhythmLabel.SINUS_TACHYCARDIA, 40)
    a = synth.gen_ibi_sequence(spec, 7, "x", 1).intervals_ms
    b = synth.gen_ibi_sequence(spec, 7, "x", 1).intervals_ms
    assert a.tobytes() == b.tobytes()
    assert synth.gen_wearable_day(3, "k") == synth.gen_wearable_day(3, "k")
    assert synth.gen_phq_record(3, "k") == synth.gen_phq_record(3, "k")
    assert synth.gen_calorie_record(3, "k") == synth.gen_calorie_record(3, "k")


def test_walking_magnitudes_in_band():
    inside = total = 0
    for seed in range(200):
        w = synth.gen_accel("walking", 5, seed).magnitudes_mps2
        assert len(w) == 5
        inside += int(np.sum((w > 8) & (w < 13)))
        total += 5
    assert inside / total > 0.99


def test_running_mean_magnitude():
    means = [synth.gen_accel("running", 5, seed).magnitudes_mps2.mean() for seed in range(1000)]
    assert abs(np.mean(means) - 16.0) < 0.3


def test_single_second_window():
    assert len(synth.gen_accel("running", 1, 0).magnitudes_mps2) == 1
    with pytest.raises(InvalidSpec):
        synth.gen_accel("running", 0, 0)


@pytest.mark.parametrize("activity, met", [("running", 8.5), ("biking", 7.5), ("walking", 3.5)])
def test_met_values(activity, met):
    assert synth.met_value(activity) == met


@pytest.mark.parametrize("args, kcal", [(("walking", 50, 156), 136.5), (("running", 30, 200), 255.0),
                                        (("biking", 0, 180), 0.0)])
def test_calories_formula(args, kcal):
    assert synth.calories_burned(*args) == pytest.approx(kcal, abs=1e-9)


def test_calorie_errors():
    with pytest.raises(UnknownActivity):
        synth.met_value("swimming")
    with pytest.raises(NegativeDuration):
        synth.calories_burned("walking", -1, 150)
    with pytest.raises(InvalidSpec):
        synth.CalorieRecord("walking", 50, 156, 214.0)


def test_stress_probability_at_high_score():
    assert synth.stress_probability(6.0) > 0.99


def test_score_zero_is_a_fair_coin():
    rng = make_rng(0, "coin")
    draws = [synth.draw_stress_label(0.0, rng) == "Stressed" for _ in range(1000)]
    assert abs(np.mean(draws) - 0.5) <= 0.05


def test_wearable_days_respect_bounds():
    for seed in range(300):
        day = synth.gen_wearable_day(seed)
        assert 0 <= day.sleep_minutes <= 1440


def test_phq_floor_and_threshold():
    best = {"steps": 30000, "rhr_bpm": 40.0, "sleep_minutes": 600.0, "nrem_hr_bpm": 35.0, "mood": 5.0}
    score = synth.phq_from_features(best)
    assert score == 0 and synth.phq_class_for(score) == "BelowThreshold"
    assert synth.phq_class_for(10) == "AtOrAboveThreshold"
    assert synth.phq_class_for(9) == "BelowThreshold"


def test_phq_balanced_mode():
    classes = [synth.gen_phq_record(1, i, balanced=True).phq_class for i in range(1000)]
    assert abs(classes.count("AtOrAboveThreshold") / 1000 - 0.5) <= 0.05


@given(st.sampled_from(synth.ACTIVITIES), st.floats(0, 300), st.floats(50, 400), st.floats(0.1, 10))
def test_calories_linear_in_weight_and_duration(activity, duration, weight, k):
    base = synth.calories_burned(activity, duration, weight)
    assert synth.calories_burned(activity, duration, weight * k) == pytest.approx(k * base, rel=1e-12, abs=1e-12)
    assert synth.calories_burned(activity, duration * k, weight) == pytest.approx(k * base, rel=1e-12, abs=1e-12)


@given(st.integers(0, 2**31), st.integers(0, 1000))
def test_calorie_records_satisfy_formula(seed, key):
    rec = synth.gen_calorie_record(seed, key)
    assert rec.calories == synth.calories_burned(rec.activity, rec.duration_min, rec.weight_lbs)
    assert 100 <= rec.weight_lbs <= 250 and 10 <= rec.duration_min <= 90
