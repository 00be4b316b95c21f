"""Run configuration: a flat ``key=value`` file, strictly validated."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

from .data import SplitSpec, SynthSpec
from .dsp import PreprocConfig
from .errors import ConfigError
from .model import HyperParams

HYPER_KEYS = tuple(f.name for f in fields(HyperParams))


@dataclass(frozen=True)
class RunConfig:
    # model and training
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
    # preprocessing
    rereference: bool = True
    bandpass: bool = True
    decimate: bool = True
    zscore: bool = True
    band_low_hz: float = 1.0
    band_high_hz: float = 32.0
    target_rate_hz: int = 128
    # split
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    # synthetic data
    synth_speakers: int = 3
    synth_trials: int = 8
    synth_seconds: float = 60.0
    synth_snr: float = 2.0
    synth_utterances: int = 10
    # paths
    trials_dir: str = ""
    embeddings: str = ""
    enrollment: str = ""
    checkpoint: str = ""
    report: str = ""

    def hyper(self) -> HyperParams:
        return HyperParams(**{k: getattr(self, k) for k in HYPER_KEYS})

    def validate(self) -> "RunConfig":
        self.hyper().validate()
        SplitSpec(self.train_frac, self.val_frac, self.test_frac, self.seed)
        if self.synth_speakers < 2 or self.synth_trials < 1 or self.synth_utterances < 1:
            raise ConfigError("synthetic data needs >= 2 speakers, >= 1 trial and >= 1 utterance")
        if not self.synth_seconds > 0 or self.synth_snr < 0 or math.isnan(self.synth_snr):
            raise ConfigError("synth_seconds must be positive and synth_snr non-negative")
        if self.target_rate_hz < 1:
            raise ConfigError("target_rate_hz must be positive")
        return self

    def split_spec(self) -> SplitSpec:
        return SplitSpec(self.train_frac, self.val_frac, self.test_frac, self.seed)

    def preproc(self) -> PreprocConfig:
        return PreprocConfig(self.rereference, self.bandpass, self.decimate, self.zscore,
                             self.band_low_hz, self.band_high_hz, self.target_rate_hz)

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(
            num_speakers=self.synth_speakers, channels=self.eeg_channels, embed_dim=self.embed_dim,
            trial_seconds=self.synth_seconds, num_trials=self.synth_trials, snr=self.synth_snr,
            seed=self.seed, utterances=self.synth_utterances, sample_rate_hz=self.target_rate_hz,
        )

    def with_overrides(self, pairs: dict) -> "RunConfig":
        return replace(self, **_coerce_all(pairs))

    def to_lines(self) -> list[str]:
        return [f"{f.name}={_format(getattr(self, f.name))}" for f in fields(self)]

    def to_text(self) -> str:
        return "\n".join(self.to_lines()) + "\n"

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        return cls(**_coerce_all(values)).validate()


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, raw):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind == "bool":
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None
    return text


def _coerce_all(values: dict) -> dict:
    return {k: _coerce(k, v) for k, v in values.items()}


def parse_config(text: str) -> RunConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are ignored."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return RunConfig.from_mapping(values)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
