"""Signal-processing primitives for the cardiovascular and activity tasks.

R-peak detection, interbeat-interval extraction, resampling, heart-rate
arithmetic, rhythm rule labelling and accelerometer magnitude windowing.
All functions are pure.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal as sps

from .errors import (
    EmptySeries,
    InvalidRate,
    LengthMismatch,
    NoPeaksFound,
    TooFewPeaks,
    TooShort,
    DataError,
)

IBI_RANGE_MS = (200.0, 4000.0)
HR_RANGE_BPM = (20.0, 300.0)
BRADY_BELOW_BPM = 60.0
TACHY_ABOVE_BPM = 100.0
REFRACTORY_S = 0.25
INTEGRATION_WINDOW_S = 0.150


class RhythmLabel(str, enum.Enum):
    NORMAL_SINUS = "Normal Sinus"
    ATRIAL_FIBRILLATION = "Atrial Fibrillation"
    SINUS_BRADYCARDIA = "Sinus Bradycardia"
    SINUS_TACHYCARDIA = "Sinus Tachycardia"


def _finite_1d(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise DataError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise EmptySeries(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class EcgTrace:
    samples: np.ndarray
    sample_rate_hz: float
    lead_name: str = "II"

    def __post_init__(self):
        if not self.sample_rate_hz > 0:
            raise InvalidRate(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", _finite_1d(self.samples, "ECG samples"))

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class IbiSequence:
    intervals_ms: np.ndarray

    def __post_init__(self):
        arr = _finite_1d(self.intervals_ms, "interbeat intervals")
        lo, hi = IBI_RANGE_MS
        if np.any((arr <= lo) | (arr >= hi)):
            raise DataError(f"interbeat intervals must lie in ({lo:g}, {hi:g}) ms")
        object.__setattr__(self, "intervals_ms", arr)

    def __len__(self):
        return len(self.intervals_ms)


@dataclass(frozen=True)
class HrSeries:
    rates_bpm: np.ndarray

    def __post_init__(self):
        arr = _finite_1d(self.rates_bpm, "heart rates")
        lo, hi = HR_RANGE_BPM
        if np.any((arr <= lo) | (arr >= hi)):
            raise DataError(f"heart rates must lie in ({lo:g}, {hi:g}) bpm")
        object.__setattr__(self, "rates_bpm", arr)


@dataclass(frozen=True)
class AccelWindow:
    magnitudes_mps2: np.ndarray
    window_seconds: int
    sample_rate_hz: float | None = None

    def __post_init__(self):
        arr = _finite_1d(self.magnitudes_mps2, "accelerometer magnitudes")
        if len(arr) != self.window_seconds:
            raise LengthMismatch(
                f"expected {self.window_seconds} magnitudes, got {len(arr)}")
        if np.any(arr < 0):
            raise DataError("accelerometer magnitudes must be non-negative")
        object.__setattr__(self, "magnitudes_mps2", arr)


def mean_hr(hr) -> float:
    """Average of a heart-rate series in beats/min."""
    if not isinstance(hr, HrSeries):
        hr = HrSeries(hr)
    return float(np.mean(hr.rates_bpm))


def ibi_to_hr(ibis) -> float:
    """Heart rate in beats/min from interbeat intervals in milliseconds.

    Uses ``60000 / mean(ibi_ms)``; the intervals are averaged first, so this is
    not the mean of the instantaneous rates.
    """
    if not isinstance(ibis, IbiSequence):
        ibis = IbiSequence(ibis)
    x = ibis.intervals_ms
    # shifted mean: exact for constant sequences, where np.mean can be off by an ulp
    lo = float(x.min())
    return 60000.0 / (lo + float(np.mean(x - lo)))


def instantaneous_hr(ibis) -> np.ndarray:
    if not isinstance(ibis, IbiSequence):
        ibis = IbiSequence(ibis)
    return 60000.0 / ibis.intervals_ms


def classify_rhythm_rule(mean_hr_bpm: float) -> RhythmLabel:
    # strict inequalities: exactly 60 or 100 bpm is normal sinus
    if mean_hr_bpm < BRADY_BELOW_BPM:
        return RhythmLabel.SINUS_BRADYCARDIA
    if mean_hr_bpm > TACHY_ABOVE_BPM:
        return RhythmLabel.SINUS_TACHYCARDIA
    return RhythmLabel.NORMAL_SINUS


def bandpass(x: np.ndarray, fs: float, low_hz: float = 1.0, high_hz: float = 20.0) -> np.ndarray:
    """Zero-phase band-pass (second-order Butterworth sections, forward-backward)."""
    high_hz = min(high_hz, 0.45 * fs)
    sos = sps.butter(2, [low_hz, high_hz], btype="bandpass", fs=fs, output="sos")
    padlen = min(len(x) - 1, 3 * int(fs))
    return sps.sosfiltfilt(sos, x, padlen=padlen)


def _integrate(x: np.ndarray, fs: float) -> np.ndarray:
    width = max(1, int(round(INTEGRATION_WINDOW_S * fs)))
    return np.convolve(x, np.ones(width) / width, mode="same")


def detect_r_peaks(ecg: EcgTrace, threshold: float = 0.65) -> np.ndarray:
    """Pan-Tompkins style R-peak detector.

    Band-pass (1-20 Hz), five-point derivative, squaring and 150 ms
    moving-window integration. Candidates are band-passed maxima at least
    250 ms apart; a candidate is a beat when its band-passed amplitude exceeds
    ``threshold`` x the running signal-peak estimate and its integrated energy
    exceeds half that fraction of the running integrator peak. Gaps longer
    than 1.66 x the recent mean RR are searched back at half the threshold.

    Returns strictly increasing sample indices.
    """
    fs = ecg.sample_rate_hz
    if ecg.duration_s < 2.0:
        raise TooShort(f"ECG trace is {ecg.duration_s:.2f} s long, need at least 2 s")
    x = ecg.samples - np.median(ecg.samples)

    filtered = bandpass(x, fs)
    kernel = np.array([1.0, 2.0, 0.0, -2.0, -1.0]) * (fs / 8.0)
    integrated = _integrate(np.convolve(filtered, kernel, mode="same") ** 2, fs)

    refractory = max(1, int(round(REFRACTORY_S * fs)))
    # edge padding lets a beat sitting on the first/last sample register as a local maximum
    candidates, _ = sps.find_peaks(np.pad(filtered, 1), distance=refractory)
    candidates = candidates - 1
    candidates = candidates[(candidates >= 0) & (candidates < len(x))]
    candidates = candidates[filtered[candidates] > 0]
    if len(candidates) == 0 or not np.max(integrated) > 1e-12:
        raise NoPeaksFound("no QRS energy found in trace")

    head = candidates[candidates < 2 * fs]
    spk_f = float(np.max(filtered[head] if len(head) else filtered[candidates]))
    spk_i = float(np.max(integrated[: int(2 * fs)]))
    accepted: list[int] = []
    for idx in candidates:
        if filtered[idx] > threshold * spk_f and integrated[idx] > 0.5 * threshold * spk_i:
            if accepted and idx - accepted[-1] < refractory:
                if filtered[idx] > filtered[accepted[-1]]:
                    accepted[-1] = int(idx)
                continue
            accepted.append(int(idx))
            spk_f = 0.125 * filtered[idx] + 0.875 * spk_f
            spk_i = 0.125 * integrated[idx] + 0.875 * spk_i
    if not accepted:
        raise NoPeaksFound("no candidate exceeded the detection threshold")
    return np.asarray(_search_back(accepted, candidates, filtered,
                                   0.5 * threshold * spk_f, refractory), dtype=int)


def _search_back(accepted, candidates, filtered, floor, refractory):
    if len(accepted) < 3:
        return accepted
    out = [accepted[0]]
    for nxt in accepted[1:]:
        recent = out[-9:] if len(out) > 1 else accepted
        rr = float(np.mean(np.diff(recent)))
        if nxt - out[-1] > 1.66 * rr:
            gap = [int(c) for c in candidates
                   if out[-1] + refractory <= c <= nxt - refractory and filtered[c] > floor]
            if gap:
                out.append(max(gap, key=lambda c: filtered[c]))
        out.append(nxt)
    return out


def peaks_to_ibis(peaks, sample_rate_hz: float) -> IbiSequence:
    peaks = np.asarray(peaks)
    if peaks.size < 2:
        raise TooFewPeaks(f"need at least 2 peaks, got {peaks.size}")
    if np.any(np.diff(peaks) <= 0):
        raise DataError("peak indices must be strictly increasing")
    return IbiSequence(np.diff(peaks).astype(float) / sample_rate_hz * 1000.0)


def resample(ecg: EcgTrace, target_hz: float, numtaps_per_side: int = 24) -> EcgTrace:
    """Polyphase windowed-sinc resampling to ``target_hz``.

    Kaiser-windowed low-pass with its cutoff at 0.45 x the target Nyquist frequency. The
    output has ``round(n * target / source)`` samples.
    """
    source_hz = ecg.sample_rate_hz
    if not 0 < target_hz <= source_hz:
        raise InvalidRate(f"target rate {target_hz} must be in (0, {source_hz}]")
    if target_hz == source_hz:
        return EcgTrace(ecg.samples.copy(), source_hz, ecg.lead_name)

    ratio = Fraction(target_hz / source_hz).limit_denominator(1000)
    up, down = ratio.numerator, ratio.denominator
    half_len = numtaps_per_side * max(up, down)
    taps = sps.firwin(2 * half_len + 1, 0.45 * target_hz / 2, window=("kaiser", 8.0),
                      fs=source_hz * up)
    out = sps.resample_poly(ecg.samples, up, down, window=taps)
    n_out = int(round(len(ecg.samples) * target_hz / source_hz))
    if len(out) >= n_out:
        out = out[:n_out]
    else:
        out = np.concatenate([out, np.full(n_out - len(out), out[-1])])
    return EcgTrace(out, float(target_hz), ecg.lead_name)


def accel_magnitude_windows(ax, ay, az, sample_rate_hz: float, window_seconds: int = 5) -> AccelWindow:
    """Per-second mean magnitude of a triaxial accelerometer recording.

    The Euclidean norm of each sample is averaged over non-overlapping
    1-second blocks; the first ``window_seconds`` blocks are returned.
    """
    if not sample_rate_hz > 0:
        raise InvalidRate(f"sample rate must be positive, got {sample_rate_hz}")
    axes = [np.asarray(a, dtype=float) for a in (ax, ay, az)]
    if len({a.shape for a in axes}) != 1:
        raise LengthMismatch("accelerometer axes differ in length")
    needed = window_seconds * sample_rate_hz
    if axes[0].size < needed:
        raise TooShort(f"need {needed:g} samples for {window_seconds} s, got {axes[0].size}")
    magnitude = np.sqrt(axes[0] ** 2 + axes[1] ** 2 + axes[2] ** 2)
    if not np.all(np.isfinite(magnitude)):
        raise DataError("accelerometer data contains non-finite values")
    bounds = np.round(np.arange(window_seconds + 1) * sample_rate_hz).astype(int)
    means = [magnitude[bounds[k]:bounds[k + 1]].mean() for k in range(window_seconds)]
    return AccelWindow(np.asarray(means), window_seconds, float(sample_rate_hz))
