"""End-to-end acceptance checks, one test class per criterion.

A pass/fail line per criterion is printed in the terminal summary.
"""

import itertools
import math
import time

import numpy as np
import pytest

from easd import io, nn
from easd.cli import main
from easd.data import SplitSpec, SynthSpec, split_dataset, synth_generate, trial_pairs, window_count
from easd.dsp import RawTrial, apply_fir, decimate, design_bandpass_fir, frequency_response, preprocess_pipeline
from easd.errors import ConfigError
from easd.metrics import accuracy, auc, eer
from easd.model import EasdModel, HyperParams, PairBatch, score_pairs, train, window_decisions
from easd.stream import batch_decisions, run_stream
from oracles import pairwise_auc, sweep_eer


def criterion(number, title):
    return pytest.mark.criterion(number, title)


# -- 1 ------------------------------------------------------------------------


@criterion(1, "full-model finite-difference gradient check, rel err < 1e-4")
class TestGradientCorrectness:
    def test_twenty_draws(self):
        grid = [(s, p, x) for s in (64, 128) for p in (2, 3, 4) for x in (1, 2, 3, 4) if p ** x < s]
        assert len(grid) == 20
        assert {x for _, _, x in grid} == {1, 2, 3, 4} and {p for _, p, _ in grid} == {2, 3, 4}
        rng = np.random.default_rng(2024)
        start = time.perf_counter()
        worst = 0.0
        for i, (s, p, x) in enumerate(grid):
            hyper = HyperParams(embed_dim=32, eeg_channels=8, window=s, overlap=0.5,
                                pointwise_filters=int(rng.choice([2, 4, 8])), filters=int(rng.choice([4, 8])),
                                num_blocks=x, kernel_size=p, seed=i)
            model = EasdModel.initialize(hyper, rng)
            emb = rng.standard_normal((2, 32))
            eeg = rng.standard_normal((2, s, 8))
            labels = np.array([1.0, 0.0])
            res = nn.check_gradients(lambda: model.loss_and_grad(emb, eeg, labels), model.parameters(),
                                     signature=model.relu_signature)
            assert res.checked > 0
            worst = max(worst, res.max_rel_err)
        elapsed = time.perf_counter() - start
        print(f"criterion 1: max rel err {worst:.3g} over 20 draws in {elapsed:.1f} s")
        assert worst < 1e-4
        assert elapsed < 60


# -- 2 ------------------------------------------------------------------------


@criterion(2, "signature shape law over the full hyperparameter grid")
class TestShapeLaw:
    def test_grid(self):
        rng = np.random.default_rng(0)
        checked = rejected = 0
        for L, S, r, T, M, X, P in itertools.product((192, 256), (64, 128), (0.5, 0.9), (2, 4, 8),
                                                     (4, 8, 16), (1, 2, 3, 4), (2, 3, 4)):
            hyper = HyperParams(embed_dim=L, eeg_channels=64, window=S, overlap=r, pointwise_filters=T,
                                filters=M, num_blocks=X, kernel_size=P)
            if P ** X >= S:
                with pytest.raises(ConfigError):
                    EasdModel.initialize(hyper)
                rejected += 1
                continue
            model = EasdModel.initialize(hyper, rng)
            want = (M, S - P ** X + 1)
            assert model.audio_signature(rng.standard_normal(L)).shape == want
            assert model.eeg_signature(rng.standard_normal((S, 64))).shape == want
            checked += 1
        assert checked + rejected == 864
        print(f"criterion 2: {checked} grid points checked, {rejected} rejected")


# -- 3 ------------------------------------------------------------------------

# totals stated for the real dataset: train + validation + test pairs
STATED_TOTALS = {
    (64, 0.5): 18_384 + 2 * 2_272,
    (64, 0.9): 98_128 + 2 * 12_112,
    (128, 0.5): 9_168 + 2 * 1_120,
    (128, 0.9): 48_976 + 2 * 5_968,
}


@criterion(3, "pair counts within 1.5% of the stated dataset totals")
class TestWindowingCounts:
    @pytest.mark.parametrize("window,overlap", list(STATED_TOTALS))
    def test_counts(self, window, overlap):
        # 8 trials of 6 minutes at 128 Hz, two pairs per window
        total = 2 * 8 * window_count(360 * 128, window, overlap)
        stated = STATED_TOTALS[(window, overlap)]
        print(f"criterion 3: S={window} r={overlap}: {total} pairs vs {stated} ({100 * (total / stated - 1):+.2f}%)")
        assert abs(total - stated) / stated <= 0.015

    def test_reference_count(self):
        assert 2 * 8 * window_count(46_080, 64, 0.5) == 23_024


# -- 4 ------------------------------------------------------------------------


@criterion(4, "AUC and EER agree with exhaustive oracles; closed-form cases exact")
class TestMetricOracles:
    def test_random_sets(self):
        rng = np.random.default_rng(4)
        for i in range(100):
            n = int(rng.integers(2, 51))
            labels = rng.integers(0, 2, n)
            labels[:2] = [0, 1]
            scores = rng.random(n)
            if i % 4 == 0:
                scores = np.round(scores * 5) / 5
            assert abs(auc(scores, labels) - pairwise_auc(scores, labels)) < 1e-9
            assert abs(eer(scores, labels) - sweep_eer(scores, labels)) < 1e-9

    def test_closed_forms(self):
        assert auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
        assert eer([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 0.0
        assert auc([0.1, 0.2, 0.9, 0.8], [1, 1, 0, 0]) == 0.0
        assert eer([0.2, 0.8], [1, 0]) == 1.0
        assert auc([0.4] * 6, [1, 0] * 3) == 0.5
        assert auc([0.8, 0.4, 0.6, 0.2], [1, 1, 0, 0]) == 0.75


# -- 5 ------------------------------------------------------------------------


def fitted_amplitude(y, freq, fs):
    t = np.arange(len(y)) / fs
    basis = np.c_[np.sin(2 * np.pi * freq * t), np.cos(2 * np.pi * freq * t)]
    return float(np.hypot(*np.linalg.lstsq(basis, y, rcond=None)[0]))


@criterion(5, "bandpass response and 10 Hz sine amplitude through the pipeline")
class TestDsp:
    def test_response(self):
        filt = design_bandpass_fir(8192, 1.0, 32.0)
        passband = frequency_response(filt, np.linspace(4, 28, 241), 8192)
        dc = frequency_response(filt, [0.0], 8192)[0]
        print(f"criterion 5: passband gain [{passband.min():.5f}, {passband.max():.5f}], 0 Hz gain {dc:.2e}")
        assert 0.95 <= passband.min() and passband.max() <= 1.05
        assert dc <= 0.01

    def test_sine_survives(self):
        fs = 8192
        t = np.arange(10 * fs) / fs
        x = np.sin(2 * np.pi * 10 * t)[:, None] * [1.0, -1.0]
        raw = RawTrial(x, fs, "probe", "spk1", "spk2")
        # filter + decimate keeps the physical amplitude
        out = decimate(apply_fir(raw, design_bandpass_fir(fs, 1.0, 32.0)), 64, check=True)
        amp = fitted_amplitude(out.samples[:, 0], 10, 128)
        # the full pipeline ends in z-scoring, which maps a sine to amplitude sqrt(2)
        full = preprocess_pipeline(raw)
        full_amp = fitted_amplitude(full.samples[:, 0], 10, 128) / math.sqrt(2)
        print(f"criterion 5: amplitude after decimation {amp:.5f}, after full pipeline {full_amp:.5f} (of sqrt 2)")
        assert out.sample_rate_hz == full.sample_rate_hz == 128
        assert abs(amp - 1) < 0.02
        assert abs(full_amp - 1) < 0.02


# -- 6 and 7 ------------------------------------------------------------------


def synthetic_run(snr, num_blocks, seed, epochs=30):
    """Synthesize, preprocess, split, train and score the held-out test split."""
    spec = SynthSpec(num_speakers=3, num_trials=8, trial_seconds=60, snr=snr, seed=seed)
    trials, embeddings = synth_generate(spec)
    enrollment = {k: v.mean(axis=0) for k, v in embeddings.items()}
    pre = [preprocess_pipeline(t) for t in trials]
    tr, va, te = split_dataset(trial_pairs(pre, 64, 0.5), SplitSpec(seed=seed))
    hyper = HyperParams(window=64, overlap=0.5, pointwise_filters=8, filters=8, num_blocks=num_blocks,
                        kernel_size=2, epochs=epochs, seed=seed, init="fan_in")
    best, _ = train(EasdModel.initialize(hyper), tr, va, enrollment, hyper)
    batch = PairBatch(te, enrollment)
    scores = score_pairs(best, batch)
    decisions, truths = window_decisions(batch, scores)
    return {"acc": accuracy(decisions, truths), "auc": auc(scores, batch.labels), "eer": eer(scores, batch.labels)}


@criterion(6, "synthetic learnability: ACC >= 95, AUC >= 0.97, EER <= 0.05; chance at snr 0")
class TestLearnability:
    def test_snr2(self):
        start = time.perf_counter()
        m = synthetic_run(2.0, 4, seed=0)
        print(f"criterion 6: snr=2 acc={m['acc']:.2f} auc={m['auc']:.4f} eer={m['eer']:.4f} "
              f"({time.perf_counter() - start:.0f} s)")
        assert m["acc"] >= 95.0
        assert m["auc"] >= 0.97
        assert m["eer"] <= 0.05

    def test_no_signal(self):
        m = synthetic_run(0.0, 4, seed=0)
        print(f"criterion 6: snr=0 acc={m['acc']:.2f}")
        assert abs(m["acc"] - 50.0) <= 5.0


@criterion(7, "one dilated block scores at least 2 points below four, over 3 seeds")
class TestDepthTrend:
    def test_margin(self):
        shallow = [synthetic_run(2.0, 1, seed)["acc"] for seed in range(3)]
        deep = [synthetic_run(2.0, 4, seed)["acc"] for seed in range(3)]
        margin = np.mean(deep) - np.mean(shallow)
        print(f"criterion 7: X=1 acc {shallow}, X=4 acc {deep}, margin {margin:.2f}")
        assert margin >= 2.0


# -- 8 ------------------------------------------------------------------------

SMALL_RUN = ["--set", "synth_seconds=20", "--set", "epochs=3", "--set", "init=fan_in", "--set", "seed=11"]


def cli(*argv):
    assert main(list(argv)) == 0


@criterion(8, "synth -> train -> eval is byte-reproducible; checkpoints round-trip")
class TestDeterminism:
    def pipeline(self, root):
        data = root / "data"
        cli("synth", "--out", str(data), *SMALL_RUN)
        cli("enroll", "--embeddings", str(data / "embeddings.txt"), "--out", str(root / "enroll.txt"))
        cli("train", "--trials", str(data), "--enrollment", str(root / "enroll.txt"),
            "--checkpoint", str(root / "model.ckpt"), "--report", str(root / "train.txt"), *SMALL_RUN)
        cli("eval", "--trials", str(data), "--enrollment", str(root / "enroll.txt"),
            "--checkpoint", str(root / "model.ckpt"), "--report", str(root / "eval.txt"))
        return root

    def test_repeat(self, tmp_path, capsys):
        a = self.pipeline(tmp_path / "a")
        b = self.pipeline(tmp_path / "b")
        capsys.readouterr()
        for name in ("train.txt", "eval.txt", "model.ckpt", "enroll.txt", "data/trial1.trial"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
        print(f"criterion 8: identical reports; eval {(a / 'eval.txt').read_text().split()}")

        config, summary, model = io.read_checkpoint(a / "model.ckpt")
        io.save_checkpoint(model, summary, tmp_path / "again.ckpt", config)
        assert (tmp_path / "again.ckpt").read_bytes() == (a / "model.ckpt").read_bytes()


# -- 9 ------------------------------------------------------------------------


@criterion(9, "stream emits a decision every 6 samples and matches batch inference")
class TestStreamingCadence:
    def test_cadence(self):
        spec = SynthSpec(num_trials=2, trial_seconds=20, snr=4.0)
        trials, embeddings = synth_generate(spec)
        enrollment = {k: v.mean(axis=0) for k, v in embeddings.items()}
        trial = preprocess_pipeline(trials[0])
        model = EasdModel.initialize(HyperParams(window=64, overlap=0.9, init="fan_in"))
        online = run_stream(trial, model, enrollment, 64, 0.9)
        offline = batch_decisions(trial, model, enrollment, 0.9)

        ends = np.round(np.array([d.time_s for d in online]) * 128).astype(int)
        assert set(np.diff(ends)) == {6}
        assert len(online) == (20 * 128 - 64) // 6 + 1
        assert [(d.time_s, d.speaker) for d in online] == [(d.time_s, d.speaker) for d in offline]
        diff = max(abs(a.probabilities[k] - b.probabilities[k])
                   for a, b in zip(online, offline) for k in a.probabilities)
        print(f"criterion 9: {len(online)} decisions every {6 / 128 * 1000:.1f} ms, "
              f"max probability difference vs batch {diff:.1e}")
        assert diff <= 1e-12
