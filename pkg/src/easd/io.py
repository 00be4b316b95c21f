"""On-disk formats: trials, embeddings, checkpoints and reports.

Trial file::

    format_version=1
    sample_rate_hz=128
    channels=64
    samples=7680
    trial_id=trial1
    attended=spk1
    competing=spk2
    <blank line>
    <samples*channels little-endian float32, time-major>

Embedding file: one utterance per line, ``speaker utterance v1 ... vL`` with
floats written at round-trip precision.

Checkpoint: ``easd-ckpt v1``, ``config.*`` and ``history.*`` key=value lines,
``tensors=<n>``, then per tensor a name line, a comma-separated shape line, a
little-endian uint64 byte count, the float64 payload and its CRC-32.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .config import HYPER_KEYS, RunConfig
from .dsp import PreprocTrial, RawTrial
from .errors import ConfigError, EasdError, FormatError
from .model import EasdModel, HyperParams, TrainHistory
from .nn import Parameter

TRIAL_VERSION = "1"
TRIAL_KEYS = ("format_version", "sample_rate_hz", "channels", "samples", "trial_id", "attended", "competing")
CKPT_MAGIC = "easd-ckpt v1"


def _read_header(data: bytes):
    """Parse ``key=value`` lines until a blank line; returns (dict, payload offset)."""
    fields, pos = {}, 0
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise FormatError("header is not terminated by a blank line", pos)
        line = data[pos:end]
        if not line:
            return fields, end + 1
        try:
            text = line.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("header line is not valid UTF-8", pos) from None
        if "=" not in text:
            raise FormatError(f"expected key=value, got {text!r}", pos)
        key, value = text.split("=", 1)
        if key in fields:
            raise FormatError(f"duplicate header key {key!r}", pos)
        fields[key] = value
        pos = end + 1


# -- trials ------------------------------------------------------------------


def save_trial(trial: RawTrial, path) -> None:
    """Write a trial; samples are stored as float32."""
    n, h = trial.samples.shape
    lines = [
        f"format_version={TRIAL_VERSION}",
        f"sample_rate_hz={trial.sample_rate_hz}",
        f"channels={h}",
        f"samples={n}",
        f"trial_id={trial.trial_id}",
        f"attended={trial.attended}",
        f"competing={trial.competing}",
    ]
    fp = getattr(trial, "fingerprint", "")
    if fp:
        lines.append(f"preproc_fingerprint={fp}")
    header = ("\n".join(lines) + "\n\n").encode("utf-8")
    payload = np.ascontiguousarray(trial.samples, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_trial(path):
    data = Path(path).read_bytes()
    fields, offset = _read_header(data)
    missing = [k for k in TRIAL_KEYS if k not in fields]
    if missing:
        raise FormatError(f"{path}: missing header keys {missing}", 0)
    unknown = set(fields) - set(TRIAL_KEYS) - {"preproc_fingerprint"}
    if unknown:
        raise FormatError(f"{path}: unknown header keys {sorted(unknown)}", 0)
    if fields["format_version"] != TRIAL_VERSION:
        raise FormatError(f"{path}: unsupported trial format version {fields['format_version']!r}")
    try:
        fs, h, n = int(fields["sample_rate_hz"]), int(fields["channels"]), int(fields["samples"])
    except ValueError:
        raise FormatError(f"{path}: sample_rate_hz, channels and samples must be integers") from None
    if fs <= 0 or h <= 0 or n <= 0:
        raise FormatError(f"{path}: sample_rate_hz, channels and samples must be positive")
    expected = n * h * 4
    actual = len(data) - offset
    if actual != expected:
        raise FormatError(
            f"{path}: payload is {actual} bytes, expected {expected} (samples={n} x channels={h} x 4)", offset
        )
    samples = np.frombuffer(data, dtype="<f4", offset=offset).reshape(n, h).astype(np.float64)
    common = dict(samples=samples, sample_rate_hz=fs, trial_id=fields["trial_id"],
                  attended=fields["attended"], competing=fields["competing"])
    if "preproc_fingerprint" in fields:
        return PreprocTrial(**common, fingerprint=fields["preproc_fingerprint"])
    return RawTrial(**common)


def list_trials(directory) -> list[Path]:
    return sorted(Path(directory).glob("*.trial"))


# -- embeddings --------------------------------------------------------------


def save_embeddings(rows, path) -> None:
    """``rows`` are ``(speaker_id, utterance_id, vector)`` triples."""
    with open(path, "w", encoding="utf-8") as fh:
        for spk, utt, vec in rows:
            values = " ".join(repr(float(v)) for v in vec)
            fh.write(f"{spk} {utt} {values}\n")


def read_embedding_rows(path) -> list[tuple[str, str, np.ndarray]]:
    rows, seen, dim = [], set(), None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise FormatError(f"{path}:{lineno}: expected 'speaker utterance v1 ... vL'")
            spk, utt = parts[0], parts[1]
            if (spk, utt) in seen:
                raise FormatError(f"{path}:{lineno}: duplicate (speaker, utterance) key ({spk}, {utt})")
            seen.add((spk, utt))
            try:
                vec = np.array([float(v) for v in parts[2:]])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric embedding value") from None
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise FormatError(f"{path}:{lineno}: ragged embedding, {len(vec)} values where {dim} expected")
            rows.append((spk, utt, vec))
    if not rows:
        raise FormatError(f"{path}: no embeddings")
    return rows


def load_embeddings(path) -> list[tuple[str, np.ndarray]]:
    return [(spk, vec) for spk, _, vec in read_embedding_rows(path)]


def load_enrollment(path) -> dict[str, np.ndarray]:
    """Speaker -> mean embedding; several rows for one speaker are averaged."""
    from .data import enroll_all

    return {spk: e.mean_embedding for spk, e in enroll_all(load_embeddings(path)).items()}


# -- checkpoints -------------------------------------------------------------


def _config_for(model: EasdModel, config: RunConfig | None) -> RunConfig:
    hyper = model.hyper.as_dict()
    if config is None:
        return RunConfig(**hyper)
    for k in HYPER_KEYS:
        if getattr(config, k) != hyper[k]:
            raise ConfigError(f"config {k}={getattr(config, k)!r} disagrees with the model ({hyper[k]!r})")
    return config


def checkpoint_bytes(model: EasdModel, history: TrainHistory | dict | None = None,
                     config: RunConfig | None = None) -> bytes:
    config = _config_for(model, config)
    lines = [CKPT_MAGIC]
    lines += [f"config.{line}" for line in config.to_lines()]
    if isinstance(history, TrainHistory):
        lines += [f"history.{k}={v!r}" for k, v in history.summary().items()]
    elif history:
        # summary already in serialized form, as returned by read_checkpoint
        lines += [f"history.{k}={v}" for k, v in history.items()]
    lines.append(f"tensors={len(model.params)}")
    out = bytearray(("\n".join(lines) + "\n").encode("utf-8"))
    for name, param in model.params.items():
        payload = np.ascontiguousarray(param.value, dtype="<f8").tobytes()
        out += f"{name}\n{','.join(str(d) for d in param.value.shape)}\n".encode("utf-8")
        out += struct.pack("<Q", len(payload)) + payload + struct.pack("<I", zlib.crc32(payload))
    return bytes(out)


def save_checkpoint(model: EasdModel, history: TrainHistory | dict | None, path,
                    config: RunConfig | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, history, config))


def _line(data: bytes, pos: int, what: str):
    end = data.find(b"\n", pos)
    if end < 0:
        raise FormatError(f"truncated checkpoint while reading {what}", pos)
    return data[pos:end].decode("utf-8", errors="replace"), end + 1


def read_checkpoint(path):
    """Returns ``(config, history_summary, model)``."""
    data = Path(path).read_bytes()
    magic, pos = _line(data, 0, "header")
    if magic != CKPT_MAGIC:
        if magic.startswith("easd-ckpt"):
            raise FormatError(f"{path}: checkpoint version {magic!r} is not supported (want {CKPT_MAGIC!r})")
        raise FormatError(f"{path}: not a checkpoint file", 0)
    cfg, hist = {}, {}
    while True:
        start = pos
        text, pos = _line(data, pos, "metadata")
        if text.startswith("tensors="):
            n_tensors = int(text.split("=", 1)[1])
            break
        key, sep, value = text.partition("=")
        if not sep:
            raise FormatError(f"{path}: bad metadata line {text!r}", start)
        if key.startswith("config."):
            cfg[key[len("config."):]] = value
        elif key.startswith("history."):
            hist[key[len("history."):]] = value
        else:
            raise FormatError(f"{path}: unknown metadata key {key!r}", start)
    try:
        config = RunConfig.from_mapping(cfg)
    except EasdError as exc:
        raise FormatError(f"{path}: invalid config snapshot: {exc}") from None
    hyper = config.hyper()
    shapes = EasdModel.param_shapes(hyper)

    params = {}
    for _ in range(n_tensors):
        name, pos = _line(data, pos, "tensor name")
        shape_text, pos = _line(data, pos, f"shape of tensor {name!r}")
        try:
            shape = tuple(int(d) for d in shape_text.split(","))
        except ValueError:
            raise FormatError(f"{path}: tensor {name!r} has a bad shape line {shape_text!r}", pos) from None
        if name not in shapes:
            raise FormatError(f"{path}: unexpected tensor record {name!r}", pos)
        if shape != shapes[name]:
            raise FormatError(f"{path}: tensor {name!r} has shape {shape}, config implies {shapes[name]}", pos)
        if pos + 8 > len(data):
            raise FormatError(f"{path}: tensor {name!r} is truncated", pos)
        (length,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        if length != 8 * int(np.prod(shape)) or pos + length + 4 > len(data):
            raise FormatError(f"{path}: tensor {name!r} payload length {length} is inconsistent", pos)
        payload = data[pos:pos + length]
        pos += length
        (crc,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if crc != zlib.crc32(payload):
            raise FormatError(f"{path}: tensor {name!r} is corrupted (CRC mismatch)", pos - 4)
        params[name] = Parameter(name, np.frombuffer(payload, dtype="<f8").reshape(shape).copy())
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes after the last tensor", pos)
    missing = set(shapes) - set(params)
    if missing:
        raise FormatError(f"{path}: missing tensors {sorted(missing)}")
    return config, hist, EasdModel(hyper, params)


def load_checkpoint(path, expected: HyperParams | RunConfig | None = None) -> EasdModel:
    """Load a model; with ``expected`` the stored hyperparameters must agree with it."""
    config, _, model = read_checkpoint(path)
    if expected is not None:
        want = expected.hyper() if isinstance(expected, RunConfig) else expected
        stored = model.hyper.as_dict()
        for k in ("embed_dim", "eeg_channels", "window", "pointwise_filters", "filters", "num_blocks", "kernel_size"):
            if stored[k] != getattr(want, k):
                raise ConfigError(f"checkpoint {path} has {k}={stored[k]}, configuration expects {getattr(want, k)}")
    return model


# -- reports -----------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_report(items, path=None) -> str:
    """``items`` is a dict or a list of preformatted lines."""
    if isinstance(items, dict):
        lines = [f"{k}={format_value(v)}" for k, v in items.items()]
    else:
        lines = list(items)
    text = "\n".join(lines) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_report(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line and " " not in line.split("=", 1)[0]:
            k, v = line.split("=", 1)
            out[k] = v
    return out
