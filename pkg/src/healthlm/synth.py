"""Seeded synthetic generators for all nine tasks.

Stand-ins for the restricted clinical and wearable sources: interbeat
interval processes per rhythm class, Gaussian-beat ECG traces with exact
beat annotations, triaxial accelerometer recordings for walking/running,
MET calorie records, and daily / four-week wearable summaries with stress
and PHQ-8 outcomes drawn from fixed models.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidSpec, NegativeDuration, UnknownActivity
from .rng import make_rng
from .signals import AccelWindow, EcgTrace, IbiSequence, RhythmLabel, accel_magnitude_windows

ACTIVITIES = ("walking", "biking", "running")
MET_VALUES = {"walking": 3.5, "biking": 7.5, "running": 8.5}

# per-second accelerometer magnitude distributions, m/s^2
ACCEL_MAGNITUDE = {"walking": (10.5, 0.6), "running": (16.0, 2.5)}
STEP_FREQUENCY_HZ = {"walking": 2, "running": 3}

R_WAVE_SIGMA_S = 0.012
IBI_CLIP_MS = (250.0, 2500.0)


@dataclass(frozen=True)
class RhythmGenSpec:
    label: RhythmLabel
    mean_rr_ms: float
    cv: float
    lag1_corr: float = 0.0
    n_beats: int = 32
    mixture: bool = False

    def __post_init__(self):
        if not 300 < self.mean_rr_ms < 2000:
            raise InvalidSpec(f"mean_rr_ms {self.mean_rr_ms} outside (300, 2000)")
        if not 0 <= self.cv <= 0.5:
            raise InvalidSpec(f"cv {self.cv} outside [0, 0.5]")
        if not -1 <= self.lag1_corr <= 1:
            raise InvalidSpec(f"lag1_corr {self.lag1_corr} outside [-1, 1]")
        if self.n_beats < 1:
            raise InvalidSpec("n_beats must be positive")


RHYTHM_DEFAULTS = {
    RhythmLabel.NORMAL_SINUS: dict(mean_rr_ms=800.0, cv=0.05, lag1_corr=0.4),
    RhythmLabel.ATRIAL_FIBRILLATION: dict(mean_rr_ms=800.0, cv=0.25, lag1_corr=0.0, mixture=True),
    RhythmLabel.SINUS_BRADYCARDIA: dict(mean_rr_ms=1200.0, cv=0.05, lag1_corr=0.4),
    RhythmLabel.SINUS_TACHYCARDIA: dict(mean_rr_ms=500.0, cv=0.05, lag1_corr=0.4),
}


def default_rhythm_spec(label: RhythmLabel, n_beats: int = 32, **overrides) -> RhythmGenSpec:
    params = dict(RHYTHM_DEFAULTS[RhythmLabel(label)])
    params.update(overrides)
    return RhythmGenSpec(label=RhythmLabel(label), n_beats=n_beats, **params)


def gen_ibi_sequence(spec: RhythmGenSpec, seed: int, *keys) -> IbiSequence:
    """Interbeat intervals (ms) from a stationary AR(1) process.

    Innovations are unit-variance Gaussian, or for ``spec.mixture`` an equal
    two-component Gaussian mixture (the irregularly irregular AF pattern).
    The process is scaled to ``mean_rr_ms`` and ``cv`` and clipped to a
    physiological range.
    """
    if not isinstance(spec, RhythmGenSpec):
        raise InvalidSpec(f"expected RhythmGenSpec, got {type(spec).__name__}")
    n = spec.n_beats
    if spec.cv == 0:
        return IbiSequence(np.full(n, float(spec.mean_rr_ms)))
    rng = make_rng(seed, "ibi", spec.label.name, *keys)
    if spec.mixture:
        # component offset 0.6 and spread 0.8 give unit total variance
        side = rng.choice([-1.0, 1.0], size=n)
        innov = 0.6 * side + 0.8 * rng.standard_normal(n)
    else:
        innov = rng.standard_normal(n)
    rho = spec.lag1_corr
    z = np.empty(n)
    z[0] = innov[0]
    scale = math.sqrt(max(0.0, 1.0 - rho * rho))
    for t in range(1, n):
        z[t] = rho * z[t - 1] + scale * innov[t]
    ibis = spec.mean_rr_ms * (1.0 + spec.cv * z)
    return IbiSequence(np.clip(ibis, *IBI_CLIP_MS))


def gen_ecg_from_ibis(ibis, sample_rate_hz: float, seed: int = 0, *, noise_sd: float = 0.0,
                      offset_s: float = 0.0, tail_s: float = 0.5):
    """Synthetic single-lead ECG with unit Gaussian R waves (sigma 12 ms).

    The first beat sits at ``offset_s`` and each following beat one interval
    later. Returns ``(EcgTrace, peak_indices)`` where the indices are the exact
    sample positions of the R-wave maxima.
    """
    if not isinstance(ibis, IbiSequence):
        ibis = IbiSequence(ibis)
    fs = float(sample_rate_hz)
    beat_times = offset_s + np.concatenate([[0.0], np.cumsum(ibis.intervals_ms) / 1000.0])
    peaks = np.round(beat_times * fs).astype(int)
    n = int(peaks[-1] + round(tail_s * fs)) + 1
    t = np.arange(n)
    sigma = R_WAVE_SIGMA_S * fs
    x = np.zeros(n)
    reach = int(math.ceil(6 * sigma))
    for p in peaks:
        lo, hi = max(0, p - reach), min(n, p + reach + 1)
        x[lo:hi] += np.exp(-0.5 * ((t[lo:hi] - p) / sigma) ** 2)
    if noise_sd > 0:
        x = x + noise_sd * make_rng(seed, "ecg-noise").standard_normal(n)
    return EcgTrace(x, fs), peaks


def gen_accel_raw(activity: str, seconds: int, seed: int, *keys, sample_rate_hz: int = 100):
    """Triaxial accelerometer recording (m/s^2) whose 1-second mean magnitudes
    follow the activity's magnitude distribution.

    Returns ``(ax, ay, az, per_second_magnitudes)``.
    """
    if activity not in ACCEL_MAGNITUDE:
        raise UnknownActivity(f"no accelerometer model for {activity!r}")
    rng = make_rng(seed, "accel", activity, *keys)
    mean, sd = ACCEL_MAGNITUDE[activity]
    target = np.maximum(0.0, rng.normal(mean, sd, size=seconds))
    fs = int(sample_rate_hz)
    t = np.arange(seconds * fs) / fs
    # step-frequency modulation completes whole cycles per second, so it averages out per block
    wobble = 1.0 + 0.1 * np.sin(2 * np.pi * STEP_FREQUENCY_HZ[activity] * t + rng.uniform(0, 2 * np.pi))
    magnitude = np.repeat(target, fs) * wobble
    theta = rng.uniform(0.2, 0.6) + 0.05 * np.sin(2 * np.pi * 0.2 * t)
    phi = rng.uniform(0, 2 * np.pi) + 0.3 * t
    ax = magnitude * np.sin(theta) * np.cos(phi)
    ay = magnitude * np.sin(theta) * np.sin(phi)
    az = magnitude * np.cos(theta)
    return ax, ay, az, target


def gen_accel(activity: str, seconds: int, seed: int, *keys) -> AccelWindow:
    if seconds < 1:
        raise InvalidSpec("seconds must be >= 1")
    ax, ay, az, _ = gen_accel_raw(activity, seconds, seed, *keys)
    return accel_magnitude_windows(ax, ay, az, 100, seconds)


def met_value(activity: str) -> float:
    try:
        return MET_VALUES[str(activity).lower()]
    except KeyError:
        raise UnknownActivity(f"unknown activity {activity!r}") from None


def calories_burned(activity: str, duration_min: float, weight_lbs: float) -> float:
    """Calories = MET x duration (min) x weight (lbs) / 200."""
    met = met_value(activity)
    if duration_min < 0:
        raise NegativeDuration(f"duration must be >= 0, got {duration_min}")
    if not weight_lbs > 0:
        raise InvalidSpec(f"weight must be positive, got {weight_lbs}")
    return met * duration_min * weight_lbs / 200.0


@dataclass(frozen=True)
class CalorieRecord:
    activity: str
    duration_min: float
    weight_lbs: float
    calories: float

    def __post_init__(self):
        expected = calories_burned(self.activity, self.duration_min, self.weight_lbs)
        if abs(expected - self.calories) > 1e-9:
            raise InvalidSpec(f"calories {self.calories} != formula value {expected}")


def gen_calorie_record(seed: int, *keys) -> CalorieRecord:
    rng = make_rng(seed, "calories", *keys)
    activity = ACTIVITIES[int(rng.integers(len(ACTIVITIES)))]
    duration = float(rng.integers(10, 91))
    weight = float(rng.integers(100, 251))
    return CalorieRecord(activity, duration, weight, calories_burned(activity, duration, weight))


# ---------------------------------------------------------------- wearables

FEATURES = ("steps", "rhr_bpm", "sleep_minutes", "nrem_hr_bpm", "mood")
STRESS_COEF = {"steps": -0.8, "rhr_bpm": 0.9, "sleep_minutes": -0.7, "nrem_hr_bpm": 0.6, "mood": -1.0}
# population mean / sd used for z-scoring; daily values and four-week means differ in spread
DAILY_POPULATION = {"steps": (8000.0, 3000.0), "rhr_bpm": (65.0, 8.0), "sleep_minutes": (420.0, 60.0),
                    "nrem_hr_bpm": (61.0, 8.5), "mood": (3.2, 1.0)}
MONTHLY_POPULATION = {"steps": (8000.0, 2500.0), "rhr_bpm": (65.0, 7.0), "sleep_minutes": (420.0, 40.0),
                      "nrem_hr_bpm": (61.0, 7.5), "mood": (3.2, 0.7)}
PHQ_INTERCEPT = 9.5
PHQ_SLOPE = 2.5
PHQ_NOISE_SD = 2.0
PHQ_THRESHOLD = 10


@dataclass(frozen=True)
class WearableDay:
    steps: int
    rhr_bpm: float
    sleep_minutes: float
    nrem_hr_bpm: float
    mood: int
    stress_label: str

    def __post_init__(self):
        if self.steps < 0 or not 0 <= self.sleep_minutes <= 1440:
            raise InvalidSpec("steps/sleep out of range")
        if self.nrem_hr_bpm > self.rhr_bpm + 30:
            raise InvalidSpec("nrem_hr_bpm exceeds rhr_bpm + 30")
        if not 1 <= self.mood <= 5:
            raise InvalidSpec("mood must be in 1..5")
        if self.stress_label not in ("Stressed", "Not Stressed"):
            raise InvalidSpec(f"bad stress label {self.stress_label!r}")

    def features(self) -> dict:
        return {k: getattr(self, k) for k in FEATURES}


@dataclass(frozen=True)
class PhqRecord:
    four_week_means: dict = field(default_factory=dict)
    phq_score: int = 0
    phq_class: str = "BelowThreshold"

    def __post_init__(self):
        if not 0 <= self.phq_score <= 24:
            raise InvalidSpec("phq_score outside 0..24")
        expected = phq_class_for(self.phq_score)
        if self.phq_class != expected:
            raise InvalidSpec(f"phq_class {self.phq_class} inconsistent with score {self.phq_score}")


def phq_class_for(score: float) -> str:
    return "AtOrAboveThreshold" if score >= PHQ_THRESHOLD else "BelowThreshold"


def linear_score(features: dict, population: dict) -> float:
    """Weighted sum of z-scored features with the fixed stress coefficients."""
    return float(sum(STRESS_COEF[k] * (features[k] - population[k][0]) / population[k][1]
                     for k in FEATURES))


def stress_probability(score: float) -> float:
    return 1.0 / (1.0 + math.exp(-score))


def draw_stress_label(score: float, rng: np.random.Generator) -> str:
    return "Stressed" if rng.random() < stress_probability(score) else "Not Stressed"


def _draw_daily_features(rng) -> dict:
    rhr = float(np.clip(round(rng.normal(65, 8)), 40, 110))
    return {
        "steps": int(np.clip(round(rng.normal(8000, 3000)), 0, 30000)),
        "rhr_bpm": rhr,
        "sleep_minutes": float(np.clip(round(rng.normal(420, 60)), 0, 1440)),
        "nrem_hr_bpm": float(np.clip(round(rhr + rng.normal(-4, 3)), 35, rhr + 30)),
        "mood": int(np.clip(round(rng.normal(3.2, 1.0)), 1, 5)),
    }


def gen_wearable_day(seed: int, *keys, target_label: str | None = None, max_tries: int = 1000) -> WearableDay:
    """One day of wearable features with a stress label from the logistic model.

    With ``target_label`` the draw is repeated (on the same stream) until the
    sampled label matches, which keeps per-class conditionals exact.
    """
    rng = make_rng(seed, "wearable-day", *keys)
    for _ in range(max_tries):
        feats = _draw_daily_features(rng)
        label = draw_stress_label(linear_score(feats, DAILY_POPULATION), rng)
        if target_label is None or label == target_label:
            return WearableDay(stress_label=label, **feats)
    raise InvalidSpec(f"could not draw a {target_label!r} day")


def phq_from_features(means: dict, noise: float = 0.0) -> int:
    raw = PHQ_INTERCEPT + PHQ_SLOPE * linear_score(means, MONTHLY_POPULATION) + noise
    return int(np.clip(round(raw), 0, 24))


def _draw_monthly_features(rng) -> dict:
    rhr = round(float(rng.normal(65, 7)), 1)
    return {
        "steps": int(np.clip(round(rng.normal(8000, 2500)), 0, 30000)),
        "rhr_bpm": rhr,
        "sleep_minutes": float(np.clip(round(rng.normal(420, 40)), 0, 1440)),
        "nrem_hr_bpm": round(float(np.clip(rhr + rng.normal(-4, 2.5), 35, rhr + 30)), 1),
        "mood": round(float(np.clip(rng.normal(3.2, 0.7), 1, 5)), 1),
    }


def gen_phq_record(seed: int, *keys, target_class: str | None = None, balanced: bool = False,
                   max_tries: int = 1000) -> PhqRecord:
    """Four-week mean features with an end-of-period PHQ-8 score.

    ``balanced=True`` first draws the target class with a fair coin, so a
    batch of records is class balanced in expectation.
    """
    rng = make_rng(seed, "phq", *keys)
    if balanced and target_class is None:
        target_class = "AtOrAboveThreshold" if rng.random() < 0.5 else "BelowThreshold"
    for _ in range(max_tries):
        means = _draw_monthly_features(rng)
        score = phq_from_features(means, rng.normal(0.0, PHQ_NOISE_SD))
        cls = phq_class_for(score)
        if target_class is None or cls == target_class:
            return PhqRecord(four_week_means=means, phq_score=score, phq_class=cls)
    raise InvalidSpec(f"could not draw a {target_class!r} record")


def spec_metadata() -> dict:
    """Generator parameters recorded in synth metadata sidecars."""
    return {
        "rhythm_defaults": {k.value: v for k, v in RHYTHM_DEFAULTS.items()},
        "accel_magnitude": {k: {"mean": m, "sd": s} for k, (m, s) in ACCEL_MAGNITUDE.items()},
        "accel_sample_rate_hz": 100,
        "met_values": dict(MET_VALUES),
        "stress_coef": dict(STRESS_COEF),
        "daily_population": {k: list(v) for k, v in DAILY_POPULATION.items()},
        "monthly_population": {k: list(v) for k, v in MONTHLY_POPULATION.items()},
        "phq": {"intercept": PHQ_INTERCEPT, "slope": PHQ_SLOPE, "noise_sd": PHQ_NOISE_SD,
                "threshold": PHQ_THRESHOLD},
    }


def record_dict(record) -> dict:
    return asdict(record)
