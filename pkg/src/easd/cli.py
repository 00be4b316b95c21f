"""Command line interface.

Subcommands: preprocess, synth, enroll, train, eval, stream, gradcheck.
Every command validates its configuration before touching data.  Failures
print ``error=<category> message=<text>`` on stderr and exit with the
category's code (2 config, 3 I/O, 4 numerical, 5 data/shape).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig, load_config
from .data import enroll_all, split_dataset, synth_generate, trial_pairs
from .dsp import preprocess_pipeline
from .errors import ConfigError, DataError, EasdError
from .metrics import accuracy, auc, eer
from .model import EasdModel, PairBatch, score_pairs, train, window_decisions
from .nn import check_gradients
from .stream import run_stream

log = logging.getLogger("easd")

GRADCHECK_TOLERANCE = 1e-4


def _parse_set(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(_parse_set(args.set)).validate()


def _need(value, what):
    if not value:
        raise ConfigError(f"no {what} given (flag or config key)")
    return value


def _load_trials(directory):
    paths = io.list_trials(_need(directory, "trials directory"))
    if not paths:
        raise DataError(f"no .trial files in {directory}")
    return [io.load_trial(p) for p in paths]


def _splits(cfg, trials):
    pairs = trial_pairs(trials, cfg.window, cfg.overlap)
    return split_dataset(pairs, cfg.split_spec())


def cmd_synth(args, cfg):
    out = Path(_need(args.out or cfg.trials_dir, "output directory"))
    out.mkdir(parents=True, exist_ok=True)
    trials, embeddings = synth_generate(cfg.synth_spec())
    for t in trials:
        io.save_trial(t, out / f"{t.trial_id}.trial")
    rows = [(spk, f"utt{k + 1}", vec) for spk, mat in embeddings.items() for k, vec in enumerate(mat)]
    emb_path = Path(args.embeddings or out / "embeddings.txt")
    io.save_embeddings(rows, emb_path)
    print(f"trials={len(trials)}")
    print(f"embeddings={emb_path}")


def cmd_preprocess(args, cfg):
    src = _need(args.input or cfg.trials_dir, "input directory")
    dst = Path(_need(args.out, "output directory"))
    dst.mkdir(parents=True, exist_ok=True)
    paths = io.list_trials(src)
    if not paths:
        raise DataError(f"no .trial files in {src}")
    for p in paths:
        trial = preprocess_pipeline(io.load_trial(p), cfg.preproc())
        io.save_trial(trial, dst / p.name)
        log.info("preprocessed %s -> %d samples at %d Hz", p.name, trial.n_samples, trial.sample_rate_hz)
    print(f"trials={len(paths)}")


def cmd_enroll(args, cfg):
    src = _need(args.embeddings or cfg.embeddings, "embeddings file")
    dst = _need(args.out or cfg.enrollment, "enrollment output file")
    enrolled = enroll_all(io.load_embeddings(src))
    io.save_embeddings([(spk, f"mean{e.K}", e.mean_embedding) for spk, e in enrolled.items()], dst)
    for spk, e in enrolled.items():
        print(f"{spk}.utterances={e.K}")


def cmd_train(args, cfg):
    trials = _load_trials(args.trials or cfg.trials_dir)
    enrollment = io.load_enrollment(_need(args.enrollment or cfg.enrollment, "enrollment file"))
    train_pairs, val_pairs, _ = _splits(cfg, trials)
    hyper = cfg.hyper()
    model = EasdModel.initialize(hyper)
    best, history = train(model, train_pairs, val_pairs, enrollment, hyper, log=log.info)
    io.save_checkpoint(best, history, _need(args.checkpoint or cfg.checkpoint, "checkpoint path"), cfg)
    text = io.write_report(history.report_lines(), args.report or cfg.report or None)
    sys.stdout.write(text)


def _model_and_config(args, cfg):
    ckpt = _need(args.checkpoint or cfg.checkpoint, "checkpoint path")
    if args.config:
        return io.load_checkpoint(ckpt, expected=cfg), cfg
    stored, _, model = io.read_checkpoint(ckpt)
    return model, stored.with_overrides(_parse_set(args.set)).validate()


def evaluate(model, cfg, trials, enrollment) -> dict:
    _, _, test_pairs = _splits(cfg, trials)
    batch = PairBatch(test_pairs, enrollment)
    scores = score_pairs(model, batch)
    decisions, truths = window_decisions(batch, scores)
    return {
        "acc": accuracy(decisions, truths),
        "auc": auc(scores, batch.labels),
        "eer": eer(scores, batch.labels),
    }


def cmd_eval(args, cfg):
    model, cfg = _model_and_config(args, cfg)
    trials = _load_trials(args.trials or cfg.trials_dir)
    enrollment = io.load_enrollment(_need(args.enrollment or cfg.enrollment, "enrollment file"))
    text = io.write_report(evaluate(model, cfg, trials, enrollment), args.report or cfg.report or None)
    sys.stdout.write(text)


def cmd_stream(args, cfg):
    model, cfg = _model_and_config(args, cfg)
    trial = io.load_trial(_need(args.trial, "trial file"))
    enrollment = io.load_enrollment(_need(args.enrollment or cfg.enrollment, "enrollment file"))
    if args.candidates == "trial":
        enrollment = {k: enrollment[k] for k in sorted((trial.attended, trial.competing))}
    decisions = run_stream(trial, model, enrollment, cfg.window, cfg.overlap)
    text = io.write_report([d.line() for d in decisions], args.out)
    if not args.out:
        sys.stdout.write(text)
    else:
        print(f"decisions={len(decisions)}")


def gradcheck_report(cfg) -> dict:
    hyper = cfg.hyper()
    rng = np.random.default_rng([cfg.seed, 4])
    model = EasdModel.initialize(hyper, rng)
    emb = rng.standard_normal((2, hyper.embed_dim))
    eeg = rng.standard_normal((2, hyper.window, hyper.eeg_channels))
    labels = np.array([1.0, 0.0])
    res = check_gradients(lambda: model.loss_and_grad(emb, eeg, labels), model.parameters(),
                          signature=model.relu_signature)
    return {"max_rel_err": res.max_rel_err, "checked": res.checked, "skipped": res.skipped,
            "tolerance": GRADCHECK_TOLERANCE, "pass": res.max_rel_err < GRADCHECK_TOLERANCE}


def cmd_gradcheck(args, cfg):
    report = gradcheck_report(cfg)
    sys.stdout.write(io.write_report(report, args.report or None))
    if not report["pass"]:
        print(f"error=numerical message=max relative error {report['max_rel_err']:.3g} "
              f"exceeds {GRADCHECK_TOLERANCE:g}", file=sys.stderr)
        return 4
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="easd", description="EEG-based attended speaker detection")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a synthetic dataset")
    p.add_argument("--out", help="directory for trial files")
    p.add_argument("--embeddings", help="embedding file (default OUT/embeddings.txt)")

    p = add("preprocess", cmd_preprocess, "re-reference, filter, decimate and normalize trials")
    p.add_argument("--in", dest="input", help="directory of raw trials")
    p.add_argument("--out", help="directory for preprocessed trials")

    p = add("enroll", cmd_enroll, "average utterance embeddings per speaker")
    p.add_argument("--embeddings")
    p.add_argument("--out")

    p = add("train", cmd_train, "train a model")
    p.add_argument("--trials")
    p.add_argument("--enrollment")
    p.add_argument("--checkpoint")
    p.add_argument("--report")

    p = add("eval", cmd_eval, "score the held-out test split")
    p.add_argument("--trials")
    p.add_argument("--enrollment")
    p.add_argument("--checkpoint")
    p.add_argument("--report")

    p = add("stream", cmd_stream, "sliding-window decisions over one trial")
    p.add_argument("--trial")
    p.add_argument("--enrollment")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.add_argument("--candidates", choices=("all", "trial"), default="all",
                   help="compare against every enrolled speaker or only the trial's two")

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of the model gradients")
    p.add_argument("--report")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = _config(args)
        return args.func(args, cfg) or 0
    except EasdError as exc:
        print(f"error={exc.category} message={exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error=io message={exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
