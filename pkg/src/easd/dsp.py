"""EEG preprocessing: common-average reference, FIR bandpass, decimation, z-scoring."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import fftconvolve

from .errors import DataError, ShapeError, WindowTooShortError

TARGET_RATE_HZ = 128
BAND_LOW_HZ = 1.0
BAND_HIGH_HZ = 32.0


@dataclass
class RawTrial:
    """Multichannel EEG trial, time-major ``samples[N, H]``."""

    samples: np.ndarray
    sample_rate_hz: int
    trial_id: str
    attended: str
    competing: str

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[1] < 1:
            raise ShapeError(f"trial {self.trial_id}: samples must be [N, H], got {self.samples.shape}")
        if int(self.sample_rate_hz) <= 0:
            raise DataError(f"trial {self.trial_id}: sample rate must be positive")
        self.sample_rate_hz = int(self.sample_rate_hz)
        if self.samples.shape[0] < self.sample_rate_hz:
            raise DataError(f"trial {self.trial_id}: shorter than one second ({self.samples.shape[0]} samples)")
        if self.attended == self.competing:
            raise DataError(f"trial {self.trial_id}: attended and competing speaker are both {self.attended!r}")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]


@dataclass
class PreprocTrial(RawTrial):
    fingerprint: str = ""


@dataclass
class FirFilter:
    taps: np.ndarray
    design_meta: dict = field(default_factory=dict)

    @property
    def delay(self) -> int:
        return (len(self.taps) - 1) // 2


def _with_samples(trial, samples, **changes):
    return replace(trial, samples=samples, **changes)


def rereference(trial):
    """Subtract the across-channel mean from every sample."""
    x = trial.samples
    if x.shape[1] < 2:
        raise DataError("common-average reference needs at least two channels")
    return _with_samples(trial, x - x.mean(axis=1, keepdims=True))


def _lowpass_sinc(cutoff_hz, fs, n_taps):
    n = np.arange(n_taps) - (n_taps - 1) / 2.0
    fc = cutoff_hz / fs
    return 2.0 * fc * np.sinc(2.0 * fc * n)


def design_bandpass_fir(fs: float, lo: float, hi: float) -> FirFilter:
    """Hamming-windowed-sinc linear-phase bandpass.

    Transition bands follow the usual EEG-toolbox defaults: the lower one is
    ``min(max(lo/4, 2), lo)`` Hz wide and the upper one ``min(max(hi/4, 2),
    fs/2 - hi)`` Hz; cutoffs sit in the middle of each transition.  The tap
    count is the smallest odd integer >= 3.3 * fs / narrowest transition.
    """
    if not 0 < lo < hi < fs / 2:
        raise DataError(f"invalid band [{lo}, {hi}] Hz for fs={fs} Hz")
    low_trans = min(max(0.25 * lo, 2.0), lo)
    high_trans = min(max(0.25 * hi, 2.0), fs / 2.0 - hi)
    n_taps = math.ceil(3.3 * fs / min(low_trans, high_trans))
    if n_taps % 2 == 0:
        n_taps += 1
    low_cut = lo - low_trans / 2.0
    high_cut = hi + high_trans / 2.0
    # each lowpass is normalized to unit DC gain, so the band's DC gain is exactly 0
    upper = _lowpass_sinc(high_cut, fs, n_taps)
    lower = _lowpass_sinc(low_cut, fs, n_taps)
    window = np.hamming(n_taps)
    upper *= window
    lower *= window
    taps = upper / upper.sum() - lower / lower.sum()
    taps = 0.5 * (taps + taps[::-1])
    meta = {
        "fs": float(fs), "lo": float(lo), "hi": float(hi),
        "low_transition": low_trans, "high_transition": high_trans,
        "window": "hamming", "n_taps": n_taps,
    }
    return FirFilter(taps, meta)


def frequency_response(filt: FirFilter, freqs_hz, fs: float) -> np.ndarray:
    """Magnitude response at the given frequencies."""
    taps = filt.taps
    n = np.arange(len(taps)) - filt.delay
    w = 2.0 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / fs
    return np.abs(np.cos(np.outer(w, n)) @ taps)


def filter_signal(x: np.ndarray, filt: FirFilter) -> np.ndarray:
    """Zero-phase-aligned FIR filtering along axis 0 with reflect padding."""
    taps = filt.taps
    n = x.shape[0]
    if n <= len(taps):
        raise WindowTooShortError(f"signal of {n} samples is not longer than the {len(taps)}-tap filter")
    pad = len(taps) // 2
    out = np.empty_like(x, dtype=np.float64)
    for c in range(x.shape[1]):
        padded = np.pad(x[:, c], pad, mode="reflect")
        full = fftconvolve(padded, taps, mode="full")
        # full output index pad + i + delay corresponds to input sample i
        out[:, c] = full[2 * pad:2 * pad + n]
    return out


def apply_fir(trial, filt: FirFilter):
    return _with_samples(trial, filter_signal(trial.samples, filt))


def energy_above(x: np.ndarray, fs: float, cutoff_hz: float) -> float:
    """Fraction of total spectral energy above ``cutoff_hz``."""
    spec = np.abs(np.fft.rfft(x, axis=0)) ** 2
    freqs = np.fft.rfftfreq(x.shape[0], d=1.0 / fs)
    total = spec.sum()
    if total == 0:
        return 0.0
    return float(spec[freqs > cutoff_hz].sum() / total)


def decimate(trial, factor: int, check: bool = False):
    """Keep every ``factor``-th sample starting at index 0.

    No anti-alias stage: the caller must have band-limited the signal.  With
    ``check`` the spectral energy above the new Nyquist must be below 1%.
    """
    factor = int(factor)
    if factor < 1 or trial.sample_rate_hz % factor:
        raise DataError(f"sample rate {trial.sample_rate_hz} Hz is not divisible by {factor}")
    if factor == 1:
        return _with_samples(trial, trial.samples.copy())
    new_rate = trial.sample_rate_hz // factor
    if check:
        frac = energy_above(trial.samples, trial.sample_rate_hz, new_rate / 2.0)
        if frac >= 0.01:
            raise DataError(f"{frac:.2%} of the energy lies above the new Nyquist {new_rate / 2} Hz")
    return _with_samples(trial, trial.samples[::factor].copy(), sample_rate_hz=new_rate)


def zscore_normalize(trial):
    """Per-channel zero mean, unit population variance; constant channels become 0."""
    x = trial.samples
    std = np.maximum(x.std(axis=0), 1e-12)
    return _with_samples(trial, (x - x.mean(axis=0)) / std)


@dataclass(frozen=True)
class PreprocConfig:
    rereference: bool = True
    bandpass: bool = True
    decimate: bool = True
    zscore: bool = True
    band_low_hz: float = BAND_LOW_HZ
    band_high_hz: float = BAND_HIGH_HZ
    target_rate_hz: int = TARGET_RATE_HZ
    check_aliasing: bool = True

    def fingerprint(self, fs: int) -> str:
        text = repr((
            self.rereference, self.bandpass, self.decimate, self.zscore,
            float(self.band_low_hz), float(self.band_high_hz), int(self.target_rate_hz),
            int(fs), "hamming-sinc",
        ))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def preprocess_pipeline(raw: RawTrial, config: PreprocConfig | None = None) -> PreprocTrial:
    """Re-reference, bandpass, decimate to the target rate, then z-score."""
    config = config or PreprocConfig()
    fs = raw.sample_rate_hz
    trial = raw
    if config.rereference:
        trial = rereference(trial)
    if config.bandpass:
        trial = apply_fir(trial, design_bandpass_fir(fs, config.band_low_hz, config.band_high_hz))
    if config.decimate:
        if fs % config.target_rate_hz:
            raise DataError(f"cannot decimate {fs} Hz to {config.target_rate_hz} Hz by an integer factor")
        trial = decimate(trial, fs // config.target_rate_hz, check=config.check_aliasing)
    if config.zscore:
        trial = zscore_normalize(trial)
    return PreprocTrial(
        samples=trial.samples,
        sample_rate_hz=trial.sample_rate_hz,
        trial_id=raw.trial_id,
        attended=raw.attended,
        competing=raw.competing,
        fingerprint=config.fingerprint(fs),
    )
