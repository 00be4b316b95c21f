"""Attended-speaker detection network.

Two branches produce voice signatures of identical shape ``[filters, S']``:

* the embedding adaptor resamples a speaker embedding to the window length and
  applies one convolution (kernel = receptive field) followed by ReLU;
* the brain encoder mixes EEG channels with a pointwise convolution and feeds
  the result through a stack of dilated convolutions (dilation ``k**i``),
  each followed by ReLU.

The match probability is the sigmoid of the cosine similarity between the two
flattened signatures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import nn
from .errors import ConfigError, DataError, DivergenceError, ShapeError


def receptive_field(kernel_size: int, num_blocks: int) -> int:
    if kernel_size < 2 or num_blocks < 1:
        raise ConfigError(f"need kernel_size >= 2 and num_blocks >= 1, got {kernel_size}, {num_blocks}")
    return kernel_size ** num_blocks


def validate_receptive_field(kernel_size: int, num_blocks: int, window: int) -> int:
    rf = receptive_field(kernel_size, num_blocks)
    if rf >= window:
        raise ConfigError(
            f"receptive field {kernel_size}**{num_blocks} = {rf} must be smaller than the window ({window} samples)"
        )
    return rf


def hop_size(window: int, overlap: float) -> int:
    """Window hop in samples: ``floor(window * (1 - overlap))``, at least 1."""
    return max(1, math.floor(window * (1.0 - overlap) + 1e-9))


@dataclass(frozen=True)
class HyperParams:
    embed_dim: int = 192
    eeg_channels: int = 64
    window: int = 64
    overlap: float = 0.5
    pointwise_filters: int = 8
    filters: int = 8
    num_blocks: int = 4
    kernel_size: int = 2
    batch_size: int = 64
    epochs: int = 100
    lr: float = 1e-3
    seed: int = 0
    init: str = "normal"

    def validate(self) -> "HyperParams":
        for name in ("embed_dim", "eeg_channels", "window", "pointwise_filters", "filters",
                     "num_blocks", "kernel_size", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.embed_dim < 2 or self.window < 2:
            raise ConfigError("embed_dim and window must be at least 2")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if not 0.0 <= self.overlap < 1.0:
            raise ConfigError(f"overlap must lie in [0, 1), got {self.overlap}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.init not in ("normal", "fan_in"):
            raise ConfigError(f"init must be 'normal' or 'fan_in', got {self.init!r}")
        validate_receptive_field(self.kernel_size, self.num_blocks, self.window)
        return self

    @property
    def receptive(self) -> int:
        return self.kernel_size ** self.num_blocks

    @property
    def out_len(self) -> int:
        return self.window - self.receptive + 1

    @property
    def hop(self) -> int:
        return hop_size(self.window, self.overlap)

    def dilations(self):
        return [self.kernel_size ** i for i in range(self.num_blocks)]

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class VoiceSignature:
    values: np.ndarray
    origin: str


def resample_embedding(emb, length: int) -> np.ndarray:
    """Linear interpolation of ``emb`` (last axis, size L) at ``length`` evenly spaced points."""
    emb = np.asarray(emb, dtype=np.float64)
    n = emb.shape[-1]
    if n < 2 or length < 2:
        raise ShapeError(f"resampling needs at least 2 points on both sides, got {n} -> {length}")
    pos = np.arange(length) * (n - 1) / (length - 1)
    lo = np.minimum(np.floor(pos).astype(int), n - 1)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    return emb[..., lo] * (1.0 - frac) + emb[..., hi] * frac


class EasdModel:
    def __init__(self, hyper: HyperParams, params: dict[str, nn.Parameter]):
        self.hyper = hyper.validate()
        self.params = params
        self._masks = []
        for name, shape in self.param_shapes(hyper).items():
            if name not in params:
                raise ShapeError(f"missing parameter {name!r}")
            if params[name].value.shape != shape:
                raise ShapeError(f"parameter {name!r} has shape {params[name].value.shape}, expected {shape}")

    @staticmethod
    def param_shapes(hyper: HyperParams) -> dict:
        m, t = hyper.filters, hyper.pointwise_filters
        shapes = {
            "adaptor.weight": (m, 1, hyper.receptive),
            "adaptor.bias": (m,),
            "pointwise.weight": (t, hyper.eeg_channels, 1),
            "pointwise.bias": (t,),
        }
        for i in range(hyper.num_blocks):
            shapes[f"dilated.{i}.weight"] = (m, t if i == 0 else m, hyper.kernel_size)
            shapes[f"dilated.{i}.bias"] = (m,)
        return shapes

    @classmethod
    def initialize(cls, hyper: HyperParams, rng: np.random.Generator | None = None) -> "EasdModel":
        """Weights ~ N(0, 1) (or N(0, 1/fan_in) with ``init='fan_in'``), biases 0."""
        hyper.validate()
        if rng is None:
            rng = np.random.default_rng([hyper.seed, 0])
        params = {}
        for name, shape in cls.param_shapes(hyper).items():
            if name.endswith("bias"):
                value = np.zeros(shape)
            else:
                value = rng.standard_normal(shape)
                if hyper.init == "fan_in":
                    value /= math.sqrt(shape[1] * shape[2])
            params[name] = nn.Parameter(name, value)
        return cls(hyper, params)

    def parameters(self) -> list[nn.Parameter]:
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def copy(self) -> "EasdModel":
        return EasdModel(self.hyper, {k: nn.Parameter(k, p.value.copy()) for k, p in self.params.items()})

    def _w(self, name):
        return self.params[name].value

    # -- forward -------------------------------------------------------------

    def _adaptor(self, emb):
        x = resample_embedding(emb, self.hyper.window)[:, None, :]
        pre = nn.conv1d_forward(x, self._w("adaptor.weight"), self._w("adaptor.bias"))
        return nn.relu(pre), (x, pre)

    def _encoder(self, eeg):
        x = np.ascontiguousarray(eeg.transpose(0, 2, 1))
        v = nn.conv1d_forward(x, self._w("pointwise.weight"), self._w("pointwise.bias"))
        cache = [x]
        h = v
        for i, d in enumerate(self.hyper.dilations()):
            pre = nn.conv1d_forward(h, self._w(f"dilated.{i}.weight"), self._w(f"dilated.{i}.bias"), d)
            cache.append((h, pre))
            h = nn.relu(pre)
        return h, cache

    def _check_embeddings(self, emb):
        emb = np.asarray(emb, dtype=np.float64)
        single = emb.ndim == 1
        emb = emb[None] if single else emb
        if emb.ndim != 2 or emb.shape[1] != self.hyper.embed_dim:
            raise ShapeError(f"embedding must have {self.hyper.embed_dim} dims, got shape {emb.shape}")
        return emb, single

    def _check_eeg(self, eeg):
        eeg = np.asarray(eeg, dtype=np.float64)
        single = eeg.ndim == 2
        eeg = eeg[None] if single else eeg
        want = (self.hyper.window, self.hyper.eeg_channels)
        if eeg.ndim != 3 or eeg.shape[1:] != want:
            raise ShapeError(f"EEG window must be {list(want)} (samples x channels), got {eeg.shape}")
        return eeg, single

    def audio_signature(self, emb) -> np.ndarray:
        """``[M, S']`` (or ``[B, M, S']`` for a batch of embeddings)."""
        emb, single = self._check_embeddings(emb)
        out, _ = self._adaptor(emb)
        return out[0] if single else out

    def eeg_signature(self, eeg) -> np.ndarray:
        """``[M, S']`` (or ``[B, M, S']``) from a ``[S, H]`` window (or ``[B, S, H]``)."""
        eeg, single = self._check_eeg(eeg)
        out, _ = self._encoder(eeg)
        return out[0] if single else out

    def predict(self, emb, eeg) -> np.ndarray:
        """Match probabilities for aligned batches of embeddings and EEG windows."""
        emb, _ = self._check_embeddings(emb)
        eeg, _ = self._check_eeg(eeg)
        s, _ = self._adaptor(emb)
        b, _ = self._encoder(eeg)
        return match_probability(s, b)

    # -- training step -------------------------------------------------------

    def loss_and_grad(self, emb, eeg, labels) -> float:
        """Mean BCE over the batch; accumulates d(mean loss)/d(param) into ``.grad``."""
        emb, _ = self._check_embeddings(emb)
        eeg, _ = self._check_eeg(eeg)
        labels = np.asarray(labels, dtype=np.float64).reshape(-1)
        batch = emb.shape[0]
        if eeg.shape[0] != batch or labels.shape[0] != batch:
            raise ShapeError("embedding, EEG and label batches differ in size")

        s, (ax, apre) = self._adaptor(emb)
        b, cache = self._encoder(eeg)
        self._masks = [apre > 0] + [pre > 0 for _, pre in cache[1:]]
        sf = s.reshape(batch, -1)
        bf = b.reshape(batch, -1)
        cos = nn.cosine_similarity(sf, bf)
        p = nn.sigmoid(cos)
        loss = float(np.mean(nn.bce_loss(p, labels)))

        g_p = nn.bce_backward(p, labels) / batch
        g_cos = nn.sigmoid_backward(g_p, p)
        g_s, g_b = nn.cosine_backward(g_cos, sf, bf)

        g = nn.relu_backward(g_s.reshape(s.shape), apre)
        _, gw, gb = nn.conv1d_backward(g, ax, self._w("adaptor.weight"))
        self.params["adaptor.weight"].grad += gw
        self.params["adaptor.bias"].grad += gb

        g = g_b.reshape(b.shape)
        for i in reversed(range(self.hyper.num_blocks)):
            h_in, pre = cache[i + 1]
            g = nn.relu_backward(g, pre)
            w = self._w(f"dilated.{i}.weight")
            g, gw, gb = nn.conv1d_backward(g, h_in, w, self.hyper.dilations()[i])
            self.params[f"dilated.{i}.weight"].grad += gw
            self.params[f"dilated.{i}.bias"].grad += gb
        _, gw, gb = nn.conv1d_backward(g, cache[0], self._w("pointwise.weight"))
        self.params["pointwise.weight"].grad += gw
        self.params["pointwise.bias"].grad += gb
        return loss

    def relu_signature(self) -> bytes:
        """Activation pattern of the last :meth:`loss_and_grad` call."""
        return b"".join(np.packbits(m).tobytes() for m in self._masks)


def adaptor_forward(emb, model: EasdModel) -> VoiceSignature:
    return VoiceSignature(model.audio_signature(emb), "audio")


def brain_encoder_forward(eeg, model: EasdModel) -> VoiceSignature:
    return VoiceSignature(model.eeg_signature(eeg), "eeg")


def match_probability(s_hat, b) -> np.ndarray:
    """Sigmoid of the cosine similarity between flattened signatures (last two axes)."""
    s_hat = np.asarray(s_hat, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if s_hat.shape != b.shape:
        raise ShapeError(f"signature shapes differ: {s_hat.shape} vs {b.shape}")
    lead = s_hat.shape[:-2]
    return nn.sigmoid(nn.cosine_similarity(s_hat.reshape(lead + (-1,)), b.reshape(lead + (-1,))))


def detect_match(s_hat, b) -> float:
    """Match probability for one pair of signatures (arrays or :class:`VoiceSignature`)."""
    s_hat = getattr(s_hat, "values", s_hat)
    b = getattr(b, "values", b)
    return float(match_probability(s_hat, b))


def detect_attention(candidates, b):
    """Index of the best-matching candidate signature and all probabilities.

    Ties go to the lowest index.
    """
    if len(candidates) < 2:
        raise DataError("attention detection needs at least two candidate speakers")
    probs = np.array([detect_match(c, b) for c in candidates])
    return int(np.argmax(probs)), probs


# -- training ----------------------------------------------------------------


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def summary(self) -> dict:
        best = self.best_epoch
        return {
            "epochs": self.epochs,
            "best_epoch": best,
            "best_val_loss": self.val_loss[best] if best >= 0 else float("nan"),
            "best_val_acc": self.val_acc[best] if best >= 0 else float("nan"),
            "final_lr": self.lr[-1] if self.lr else float("nan"),
        }

    def report_lines(self) -> list[str]:
        lines = [f"{k}={v!r}" for k, v in self.summary().items()]
        for i in range(self.epochs):
            lines.append(
                f"epoch={i} train_loss={self.train_loss[i]!r} val_loss={self.val_loss[i]!r} "
                f"val_acc={self.val_acc[i]!r} lr={self.lr[i]!r}"
            )
        return lines


class PairBatch:
    """Pairs packed into arrays: one copy per distinct window, indices for the rest."""

    def __init__(self, pairs, embeddings):
        if not pairs:
            raise DataError("empty pair set")
        index, windows, self.window_keys = {}, [], []
        win_idx, spk = [], []
        for pair in pairs:
            key = (pair.trial_id, pair.start)
            if key not in index:
                index[key] = len(windows)
                windows.append(pair.eeg)
                self.window_keys.append(key)
            win_idx.append(index[key])
            if pair.speaker_id not in embeddings:
                raise DataError(f"no enrollment for speaker {pair.speaker_id!r}")
            spk.append(pair.speaker_id)
        self.speakers = sorted(set(spk))
        self.windows = np.stack(windows).astype(np.float64)
        self.window_index = np.array(win_idx)
        self.speaker_index = np.array([self.speakers.index(s) for s in spk])
        self.embeddings = np.stack([np.asarray(embeddings[s], dtype=np.float64) for s in self.speakers])
        self.labels = np.array([p.label for p in pairs], dtype=np.float64)

    def __len__(self):
        return len(self.labels)

    def take(self, idx):
        return (self.embeddings[self.speaker_index[idx]], self.windows[self.window_index[idx]], self.labels[idx])


def score_pairs(model: EasdModel, batch: PairBatch, chunk: int = 512) -> np.ndarray:
    """Match probability for every pair, computing each window's signature once."""
    sig_audio = model.audio_signature(batch.embeddings)
    sig_eeg = np.concatenate([
        model.eeg_signature(batch.windows[i:i + chunk]) for i in range(0, len(batch.windows), chunk)
    ])
    return match_probability(sig_audio[batch.speaker_index], sig_eeg[batch.window_index])


def window_decisions(batch: PairBatch, scores):
    """Per-window attention decisions from pair scores.

    Candidates are the window's speakers in sorted id order; returns
    ``(decisions, truths)`` as speaker-id lists.
    """
    per_window = {}
    for k in range(len(batch)):
        w = batch.window_index[k]
        per_window.setdefault(w, []).append(
            (batch.speakers[batch.speaker_index[k]], float(scores[k]), batch.labels[k])
        )
    decisions, truths = [], []
    for w in sorted(per_window):
        cands = sorted(per_window[w])
        positives = [c[0] for c in cands if c[2] == 1]
        if len(cands) < 2 or len(positives) != 1:
            continue
        j = int(np.argmax([c[1] for c in cands]))
        decisions.append(cands[j][0])
        truths.append(positives[0])
    return decisions, truths


def _mean_loss(model, batch):
    p = score_pairs(model, batch)
    return float(np.mean(nn.bce_loss(p, batch.labels))), p


def train(model: EasdModel, train_pairs, val_pairs, embeddings, hyper: HyperParams | None = None,
          log=None):
    """Minibatch Adam on mean BCE; returns ``(best_model, history)``.

    The learning rate halves after 3 consecutive epochs whose validation loss
    does not strictly improve on the best so far.  The returned model is the
    checkpoint with the lowest validation loss.
    """
    hyper = (hyper or model.hyper).validate()
    if not train_pairs or not val_pairs:
        raise DataError("training and validation sets must be non-empty")
    tr = PairBatch(train_pairs, embeddings)
    va = PairBatch(val_pairs, embeddings)
    overlap = set(tr.window_keys) & set(va.window_keys)
    if overlap:
        raise DataError(f"{len(overlap)} windows appear in both training and validation sets")

    rng = np.random.default_rng([hyper.seed, 1])
    state = nn.AdamState.for_params(model.parameters(), lr=hyper.lr)
    history = TrainHistory()
    best = model.copy()
    best_loss = math.inf
    stale = 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(tr))
        total = 0.0
        for start in range(0, len(order), hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            model.zero_grad()
            loss = model.loss_and_grad(*tr.take(idx))
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            total += loss * len(idx)
            nn.adam_step(model.parameters(), state)
        val_loss, val_scores = _mean_loss(model, va)
        if not math.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        decisions, truths = window_decisions(va, val_scores)
        acc = 100.0 * np.mean([d == t for d, t in zip(decisions, truths)]) if truths else float("nan")

        history.train_loss.append(total / len(tr))
        history.val_loss.append(val_loss)
        history.val_acc.append(float(acc))
        history.lr.append(state.lr)
        if val_loss < best_loss:
            best_loss = val_loss
            best = model.copy()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale == 3:
                state.lr *= 0.5
                stale = 0
        if log is not None:
            log(f"epoch {epoch}: train_loss={history.train_loss[-1]:.5f} val_loss={val_loss:.5f} "
                f"val_acc={acc:.2f} lr={history.lr[-1]:g}")
    return best, history


__all__ = [
    "HyperParams", "EasdModel", "VoiceSignature", "TrainHistory", "PairBatch",
    "receptive_field", "validate_receptive_field", "hop_size", "resample_embedding",
    "adaptor_forward", "brain_encoder_forward",
    "match_probability", "detect_match", "detect_attention", "score_pairs",
    "window_decisions", "train",
]
