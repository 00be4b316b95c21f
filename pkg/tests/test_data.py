import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from easd.data import (
    SplitSpec,
    SynthSpec,
    Window,
    enroll_all,
    enroll_speaker,
    make_pairs,
    matched_filter_accuracy,
    modulation,
    rotation,
    split_dataset,
    synth_generate,
    synth_patterns,
    trial_pairs,
    window_count,
    window_starts,
    window_trial,
)
from easd.dsp import RawTrial
from easd.errors import DataError, ShapeError, WindowTooShortError


def zeros_trial(n, tid="t1", channels=2, fs=16):
    return RawTrial(np.arange(n * channels, dtype=float).reshape(n, channels), fs, tid, "spk1", "spk3")


def naive_starts(n, window, hop):
    starts, s = [], 0
    while s + window <= n:
        starts.append(s)
        s += hop
    return starts


class TestWindowing:
    def test_basic(self):
        assert window_starts(128, 64, 0.5) == [0, 32, 64]

    def test_six_minute_trial(self):
        assert window_count(46_080, 64, 0.5) == 1439

    def test_high_overlap_hop(self):
        assert window_starts(100, 64, 0.9)[:3] == [0, 6, 12]

    def test_too_short(self):
        with pytest.raises(WindowTooShortError):
            window_starts(63, 64, 0.5)

    def test_windows_are_slices(self):
        t = zeros_trial(64)
        wins = window_trial(t, 16, 0.5)
        assert [w.start for w in wins] == list(range(0, 49, 8))
        np.testing.assert_array_equal(wins[2].eeg, t.samples[16:32])
        assert all(w.trial_id == "t1" for w in wins)

    @settings(max_examples=300, deadline=None)
    @given(st.integers(1, 400), st.integers(1, 128), st.sampled_from([0.0, 0.25, 0.5, 0.75, 0.9]))
    def test_count_formula(self, n, window, overlap):
        hop = max(1, math.floor(window * (1 - overlap) + 1e-9))
        if n < window:
            return
        starts = window_starts(n, window, overlap)
        assert starts == naive_starts(n, window, hop)
        assert window_count(n, window, overlap) == len(starts) == (n - window) // hop + 1


class TestPairs:
    def test_two_per_window(self):
        wins = [Window("t1", s, np.zeros((4, 2))) for s in (0, 2, 4)]
        pairs = make_pairs(wins, "spk1", "spk3")
        assert len(pairs) == 6
        assert [(p.speaker_id, p.label) for p in pairs[:2]] == [("spk1", 1), ("spk3", 0)]
        assert sum(p.label for p in pairs) == 3

    def test_same_speaker(self):
        with pytest.raises(DataError):
            make_pairs([], "a", "a")

    def test_label_iff_attended(self):
        trials = [zeros_trial(64, "t1"), RawTrial(np.zeros((64, 2)), 16, "t2", "spk3", "spk2")]
        for p in trial_pairs(trials, 16, 0.5):
            attended = {"t1": "spk1", "t2": "spk3"}[p.trial_id]
            assert p.label == int(p.speaker_id == attended)


class TestSplit:
    @pytest.fixture
    def pairs(self):
        return trial_pairs([zeros_trial(16 * 101, "t1", fs=16)], 32, 0.5)

    def test_sizes(self):
        wins = [Window("t", s, np.zeros((2, 1))) for s in range(100)]
        tr, va, te = split_dataset(make_pairs(wins, "a", "b"), SplitSpec())
        assert (len(tr), len(va), len(te)) == (160, 20, 20)

    def test_partition(self, pairs):
        parts = split_dataset(pairs, SplitSpec(seed=4))
        ids = [{id(p) for p in part} for part in parts]
        assert sum(len(s) for s in ids) == len(pairs)
        assert set().union(*ids) == {id(p) for p in pairs}
        keys = [{p.window_key for p in part} for part in parts]
        assert not (keys[0] & keys[1] or keys[0] & keys[2] or keys[1] & keys[2])

    def test_deterministic(self, pairs):
        a = split_dataset(pairs, SplitSpec(seed=1))
        b = split_dataset(pairs, SplitSpec(seed=1))
        c = split_dataset(pairs, SplitSpec(seed=2))
        keys = [[[p.window_key for p in part] for part in split] for split in (a, b, c)]
        assert keys[0] == keys[1] != keys[2]

    def test_too_few(self):
        wins = [Window("t", s, np.zeros((2, 1))) for s in range(4)]
        with pytest.raises(DataError):
            split_dataset(make_pairs(wins, "a", "b"), SplitSpec())

    @pytest.mark.parametrize("fracs", [(0.8, 0.1, 0.2), (0.9, 0.1, 0.0), (1.2, -0.1, -0.1)])
    def test_bad_fractions(self, fracs):
        with pytest.raises(DataError):
            SplitSpec(*fracs)


class TestEnrollment:
    def test_single(self):
        e = np.array([0.5, -1.0, 2.0])
        enrolled = enroll_speaker([e], "spk1")
        np.testing.assert_array_equal(enrolled.mean_embedding, e)
        assert enrolled.K == 1 and enrolled.speaker_id == "spk1"

    def test_symmetric(self):
        e = np.random.default_rng(0).standard_normal(8)
        assert not enroll_speaker([e, -e]).mean_embedding.any()

    def test_naive_mean(self):
        emb = np.random.default_rng(1).standard_normal((10, 192))
        naive = [sum(emb[k, i] for k in range(10)) / 10 for i in range(192)]
        np.testing.assert_allclose(enroll_speaker(emb).mean_embedding, naive, rtol=0, atol=1e-12)

    def test_grouping(self):
        rows = [("b", np.ones(3)), ("a", np.zeros(3)), ("b", 3 * np.ones(3))]
        out = enroll_all(rows)
        assert list(out) == ["b", "a"]
        np.testing.assert_array_equal(out["b"].mean_embedding, [2, 2, 2])
        assert out["b"].K == 2

    def test_inconsistent_dims(self):
        with pytest.raises(ShapeError):
            enroll_all([("a", np.ones(3)), ("a", np.ones(4))])


class TestRotation:
    @pytest.mark.parametrize("trials,speakers", [(8, 3), (8, 2), (12, 4), (5, 3)])
    def test_distinct(self, trials, speakers):
        for a, c in rotation(trials, speakers):
            assert a != c and 0 <= a < speakers and 0 <= c < speakers

    def test_roles_swap(self):
        rot = rotation(8, 3)
        for i in range(0, 8, 2):
            assert rot[i] == rot[i + 1][::-1]

    def test_every_attended_speaker_also_competes(self):
        rot = rotation(8, 3)
        for i, (a, _) in enumerate(rot):
            assert any(c == a for j, (_, c) in enumerate(rot) if j != i)

    def test_attended_counts_balanced(self):
        # per speaker pairing, each side is attended equally often
        counts = {}
        for a, c in rotation(12, 3):
            counts[(a, c)] = counts.get((a, c), 0) + 1
        for (a, c), n in counts.items():
            assert counts.get((c, a), 0) == n


class TestSynth:
    def test_modulation_unit_rms(self):
        m = modulation(1280, 128, np.random.default_rng(0))
        assert np.sqrt(np.mean(m ** 2)) == pytest.approx(1.0, abs=1e-12)
        spec = np.abs(np.fft.rfft(m)) ** 2
        freqs = np.fft.rfftfreq(1280, 1 / 128)
        assert spec[freqs > 17].sum() / spec.sum() < 0.01

    def test_shapes_and_labels(self):
        spec = SynthSpec(trial_seconds=2, num_trials=4, channels=5, embed_dim=12, utterances=4)
        trials, emb = synth_generate(spec)
        assert len(trials) == 4
        assert all(t.samples.shape == (256, 5) and t.sample_rate_hz == 128 for t in trials)
        assert sorted(emb) == ["spk1", "spk2", "spk3"]
        assert all(v.shape == (4, 12) for v in emb.values())
        np.testing.assert_allclose(np.linalg.norm(emb["spk1"], axis=1), 1.0)

    def test_deterministic(self):
        spec = SynthSpec(trial_seconds=2, num_trials=2, channels=4, embed_dim=8)
        (t1, e1), (t2, e2) = synth_generate(spec), synth_generate(spec)
        assert all(a.samples.tobytes() == b.samples.tobytes() for a, b in zip(t1, t2))
        assert all(e1[k].tobytes() == e2[k].tobytes() for k in e1)

    def test_signal_power(self):
        spec = SynthSpec(trial_seconds=30, num_trials=2, channels=16, embed_dim=32, snr=math.inf)
        trials, _ = synth_generate(spec)
        assert np.mean(trials[0].samples ** 2) == pytest.approx(1.0, abs=1e-12)

    def test_needs_two_speakers(self):
        with pytest.raises(DataError):
            synth_generate(SynthSpec(num_speakers=1))

    def test_utterances_cluster_by_speaker(self):
        _, emb = synth_generate(SynthSpec(trial_seconds=1, num_trials=1, channels=2))
        means = {k: v.mean(axis=0) for k, v in emb.items()}
        for k, v in emb.items():
            for u in v:
                sims = {j: u @ m / np.linalg.norm(m) for j, m in means.items()}
                assert max(sims, key=sims.get) == k


class TestMatchedFilterOracle:
    @staticmethod
    def oracle_accuracy(snr, seed=0):
        spec = SynthSpec(snr=snr, seed=seed)
        trials, _ = synth_generate(spec)
        _, patterns = synth_patterns(spec)
        return matched_filter_accuracy(trials, patterns, 64, 0.5)

    def test_noiseless_is_perfect(self):
        assert self.oracle_accuracy(math.inf) == 100.0

    def test_no_signal_is_chance(self):
        assert abs(self.oracle_accuracy(0.0) - 50.0) <= 5.0

    def test_monotone_in_snr(self):
        accs = [self.oracle_accuracy(s) for s in (0.0, 0.5, 1.0, 2.0, 4.0)]
        drops = [a - b for a, b in zip(accs, accs[1:]) if b < a]
        assert len(drops) <= 1 and all(d <= 1.0 for d in drops)
        assert accs[-1] > 95.0
