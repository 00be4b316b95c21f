"""Windowing, match/mismatch pairs, splits, enrollment and a synthetic dataset."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dsp import RawTrial
from .errors import DataError, ShapeError, WindowTooShortError
from .model import hop_size


@dataclass
class Window:
    trial_id: str
    start: int
    eeg: np.ndarray


@dataclass
class WindowPair:
    eeg: np.ndarray
    speaker_id: str
    label: int
    trial_id: str
    start: int

    @property
    def window_key(self):
        return (self.trial_id, self.start)


@dataclass
class EnrollmentSet:
    speaker_id: str
    utterances: np.ndarray
    mean_embedding: np.ndarray

    @property
    def K(self) -> int:
        return self.utterances.shape[0]


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise DataError(f"split fractions must be positive and sum to 1, got {fr}")


def window_starts(n_samples: int, window: int, overlap: float) -> list[int]:
    hop = hop_size(window, overlap)
    if n_samples < window:
        raise WindowTooShortError(f"trial of {n_samples} samples is shorter than the {window}-sample window")
    return list(range(0, n_samples - window + 1, hop))


def window_count(n_samples: int, window: int, overlap: float) -> int:
    return (n_samples - window) // hop_size(window, overlap) + 1


def window_trial(trial, window: int, overlap: float) -> list[Window]:
    """Slide a window of ``window`` samples with hop ``floor(window*(1-overlap))``.

    The trailing partial window is dropped.  Windows are views into the trial.
    """
    x = trial.samples
    return [Window(trial.trial_id, s, x[s:s + window]) for s in window_starts(x.shape[0], window, overlap)]


def make_pairs(windows, attended: str, competing: str) -> list[WindowPair]:
    """Each window yields a matched pair (attended, 1) and a mismatched pair (competing, 0)."""
    if attended == competing:
        raise DataError("attended and competing speakers must differ")
    pairs = []
    for w in windows:
        pairs.append(WindowPair(w.eeg, attended, 1, w.trial_id, w.start))
        pairs.append(WindowPair(w.eeg, competing, 0, w.trial_id, w.start))
    return pairs


def trial_pairs(trials, window: int, overlap: float) -> list[WindowPair]:
    pairs = []
    for t in trials:
        pairs.extend(make_pairs(window_trial(t, window, overlap), t.attended, t.competing))
    return pairs


def split_dataset(pairs, spec: SplitSpec):
    """Seeded shuffle of windows, then contiguous 80/10/10-style slices.

    Both pairs cut from one window always land in the same subset.
    """
    if len(pairs) < 10:
        raise DataError(f"need at least 10 pairs to split, got {len(pairs)}")
    groups: dict = {}
    for p in pairs:
        groups.setdefault(p.window_key, []).append(p)
    keys = list(groups)
    order = np.random.default_rng([spec.seed, 3]).permutation(len(keys))
    n = len(keys)
    n_train = int(round(spec.train * n))
    n_val = int(round(spec.val * n))
    if n_train == 0 or n_val == 0 or n - n_train - n_val <= 0:
        raise DataError(f"{n} windows are too few for split {spec.train}/{spec.val}/{spec.test}")
    cuts = [order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]]
    return tuple([p for i in part for p in groups[keys[i]]] for part in cuts)


def enroll_speaker(embeddings, speaker_id: str = "") -> EnrollmentSet:
    """Average K utterance embeddings into one speaker embedding."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim == 1:
        emb = emb[None]
    if emb.ndim != 2 or emb.shape[0] < 1 or emb.shape[1] < 1:
        raise ShapeError(f"expected K x L embeddings, got shape {emb.shape}")
    return EnrollmentSet(speaker_id, emb, emb.mean(axis=0))


def enroll_all(rows) -> dict[str, EnrollmentSet]:
    """Group ``(speaker_id, vector)`` rows by speaker (first-seen order) and enroll each."""
    by_speaker: dict = {}
    dims = {len(v) for _, v in rows}
    if len(dims) > 1:
        raise ShapeError(f"inconsistent embedding dimensions {sorted(dims)}")
    for spk, vec in rows:
        by_speaker.setdefault(spk, []).append(vec)
    return {spk: enroll_speaker(v, spk) for spk, v in by_speaker.items()}


# -- synthetic Speech-EEG data -----------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    num_speakers: int = 3
    channels: int = 64
    embed_dim: int = 192
    trial_seconds: float = 60.0
    num_trials: int = 8
    snr: float = 2.0
    seed: int = 0
    utterances: int = 10
    utterance_noise: float = 0.3
    sample_rate_hz: int = 128
    n_sinusoids: int = 8
    max_mod_hz: float = 16.0


def speaker_ids(n: int) -> list[str]:
    return [f"spk{i + 1}" for i in range(n)]


def rotation(num_trials: int, num_speakers: int) -> list[tuple[int, int]]:
    """Attended/competing speaker indices per trial.

    Consecutive trials form a block over the same two speakers with the roles
    swapped, so every speaker pairing is attended equally often from both
    sides and a speaker prior cannot beat chance.  Blocks cycle the first
    speaker and rotate the second through the rest.
    """
    out = []
    for i in range(num_trials):
        k = i // 2
        a = k % num_speakers
        b = (a + 1 + (k // num_speakers) % (num_speakers - 1)) % num_speakers
        out.append((a, b) if i % 2 == 0 else (b, a))
    return out


def synth_patterns(spec: SynthSpec):
    """Ground-truth speaker embeddings ``[C, L]`` and spatial patterns ``[C, H]``."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(3)[0])
    emb = rng.standard_normal((spec.num_speakers, spec.embed_dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    mixing = rng.standard_normal((spec.channels, spec.embed_dim)) / math.sqrt(spec.embed_dim)
    return emb, emb @ mixing.T


def modulation(n: int, fs: float, rng, n_sinusoids: int = 8, max_hz: float = 16.0) -> np.ndarray:
    """Unit-RMS sum of random-phase sinusoids with frequencies uniform in [1, max_hz] Hz."""
    t = np.arange(n) / fs
    freqs = rng.uniform(1.0, max_hz, n_sinusoids)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_sinusoids)
    m = np.sin(2.0 * np.pi * freqs[:, None] * t[None, :] + phases[:, None]).sum(axis=0)
    return m / np.sqrt(np.mean(m ** 2))


def synth_generate(spec: SynthSpec):
    """Synthetic trials and per-speaker utterance embeddings.

    The attended speaker's spatial pattern (a fixed random projection of its
    embedding) is modulated by a smooth random signal and buried in white
    noise.  Signal power / noise power equals ``snr``; ``snr=0`` leaves noise
    only and ``snr=inf`` leaves signal only.

    Returns ``(trials, embeddings)`` with ``embeddings[speaker] -> [K, L]``.
    """
    if spec.num_speakers < 2:
        raise DataError("synthetic data needs at least two speakers")
    if spec.snr < 0:
        raise DataError("snr must be non-negative")
    _, emb_rng, trial_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(3))
    true_emb, patterns = synth_patterns(spec)
    ids = speaker_ids(spec.num_speakers)

    embeddings = {}
    for j, spk in enumerate(ids):
        noise = emb_rng.standard_normal((spec.utterances, spec.embed_dim))
        noise *= spec.utterance_noise / np.linalg.norm(noise, axis=1, keepdims=True)
        utt = true_emb[j] + noise
        embeddings[spk] = utt / np.linalg.norm(utt, axis=1, keepdims=True)

    n = int(round(spec.trial_seconds * spec.sample_rate_hz))
    noiseless = math.isinf(spec.snr)
    trials = []
    for i, (att, comp) in enumerate(rotation(spec.num_trials, spec.num_speakers)):
        m = modulation(n, spec.sample_rate_hz, trial_rng, spec.n_sinusoids, spec.max_mod_hz)
        signal = np.outer(m, patterns[att])
        signal *= math.sqrt((1.0 if noiseless else spec.snr) / np.mean(signal ** 2))
        noise = trial_rng.standard_normal((n, spec.channels))
        samples = signal if noiseless else signal + noise
        trials.append(RawTrial(samples, spec.sample_rate_hz, f"trial{i + 1}", ids[att], ids[comp]))
    return trials, embeddings


def matched_filter_scores(window: np.ndarray, patterns: np.ndarray) -> np.ndarray:
    """Energy of the window projected on each unit-normalized spatial pattern."""
    unit = patterns / np.linalg.norm(patterns, axis=1, keepdims=True)
    return np.sum((window @ unit.T) ** 2, axis=0)


def matched_filter_accuracy(trials, patterns, window: int, overlap: float) -> float:
    """Percentage of windows where the attended pattern out-scores the competing one."""
    ids = speaker_ids(len(patterns))
    correct = total = 0
    for t in trials:
        a, c = ids.index(t.attended), ids.index(t.competing)
        for w in window_trial(t, window, overlap):
            s = matched_filter_scores(w.eeg, patterns[[a, c]])
            correct += int(s[0] > s[1])
            total += 1
    return 100.0 * correct / total
