"""Sliding-window attention decisions over a preprocessed trial."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import window_starts
from .errors import ConfigError, DataError
from .model import EasdModel, hop_size, match_probability


@dataclass
class Decision:
    time_s: float
    speaker: str
    probabilities: dict

    def line(self) -> str:
        probs = " ".join(f"p.{k}={v!r}" for k, v in self.probabilities.items())
        return f"t={self.time_s!r} speaker={self.speaker} {probs}"


def _candidates(model, enrollments):
    if len(enrollments) < 1:
        raise DataError("no enrolled speakers")
    if len(enrollments) < 2:
        raise DataError("attention detection needs at least two enrolled speakers")
    ids = list(enrollments)
    signatures = model.audio_signature(np.stack([enrollments[k] for k in ids]))
    return ids, signatures


def _check_window(model, window):
    if window is not None and window != model.hyper.window:
        raise ConfigError(f"stream window {window} differs from the model's {model.hyper.window}")


def iter_stream(trial, model: EasdModel, enrollments: dict, window: int | None = None,
                overlap: float | None = None):
    """Yield one :class:`Decision` per hop, reading the trial window by window.

    Audio signatures are computed once up front.  ``time_s`` is the time at
    which the window ends, i.e. when the decision becomes available.
    """
    _check_window(model, window)
    window = model.hyper.window
    overlap = model.hyper.overlap if overlap is None else overlap
    ids, signatures = _candidates(model, enrollments)
    fs = trial.sample_rate_hz
    for start in window_starts(trial.samples.shape[0], window, overlap):
        b = model.eeg_signature(trial.samples[start:start + window])
        probs = match_probability(signatures, np.broadcast_to(b, signatures.shape))
        j = int(np.argmax(probs))
        yield Decision((start + window) / fs, ids[j], dict(zip(ids, probs.tolist())))


def run_stream(trial, model, enrollments, window=None, overlap=None) -> list[Decision]:
    return list(iter_stream(trial, model, enrollments, window, overlap))


def batch_decisions(trial, model: EasdModel, enrollments: dict, overlap: float | None = None) -> list[Decision]:
    """Offline counterpart of :func:`run_stream`: all windows encoded in one batch."""
    window = model.hyper.window
    overlap = model.hyper.overlap if overlap is None else overlap
    ids, signatures = _candidates(model, enrollments)
    starts = window_starts(trial.samples.shape[0], window, overlap)
    eeg = np.stack([trial.samples[s:s + window] for s in starts])
    b = model.eeg_signature(eeg)
    probs = match_probability(
        np.broadcast_to(signatures[None], (len(starts),) + signatures.shape),
        np.broadcast_to(b[:, None], (len(starts), len(ids)) + b.shape[1:]),
    )
    fs = trial.sample_rate_hz
    return [
        Decision((s + window) / fs, ids[int(np.argmax(p))], dict(zip(ids, p.tolist())))
        for s, p in zip(starts, probs)
    ]


def decision_period_s(window: int, overlap: float, sample_rate_hz: int) -> float:
    return hop_size(window, overlap) / sample_rate_hz
