import json

import numpy as np
import pytest

from cvse.data_mixing import (
    DatasetConfig,
    MixManifest,
    active_power,
    build_dataset,
    gen_synthetic_noise,
    gen_synthetic_speech,
    mix_at_snr,
    snr_gain,
    split_counts,
)
from cvse.signal_frontend import Waveform, load_wav


def signs(rng, n, scale=1.0):
    return scale * np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0)


def octave_band_psd(x, sample_rate, lo, hi):
    spec = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), 1.0 / sample_rate)
    mask = (freqs >= lo) & (freqs < hi)
    return float(np.mean(spec[mask]))


class TestMixAtSnr:
    def test_equal_power_zero_db_unit_gain(self, np_rng):
        x = signs(np_rng, 8000)
        d = signs(np_rng, 8000)
        assert snr_gain(x, d, 0.0) == pytest.approx(1.0, abs=0)

    def test_gain_plug_in_example(self, np_rng):
        x = signs(np_rng, 8000, scale=2.0)  # active power 4
        d = signs(np_rng, 8000)  # active power 1
        assert snr_gain(x, d, 10.0) == pytest.approx(np.sqrt(0.4), rel=1e-12)

    def test_high_snr_limit(self, np_rng):
        x = Waveform(signs(np_rng, 8000, scale=0.4), 16000)
        d = Waveform(signs(np_rng, 8000, scale=0.4), 16000)
        y, _ = mix_at_snr(x, d, 60.0)
        assert np.linalg.norm(y.samples - x.samples) <= 1e-3 * np.linalg.norm(x.samples)

    def test_unmixing_is_bitwise(self, np_rng):
        x = Waveform(np.round(np_rng.uniform(-0.4, 0.4, 16000) * 32768) / 32768, 16000)
        d = Waveform(np.round(np_rng.uniform(-0.4, 0.4, 16000) * 32768) / 32768, 16000)
        y, d_s = mix_at_snr(x, d, 3.0)
        recovered = y.samples - d_s.samples
        assert np.array_equal(recovered, x.samples)

    def test_realized_snr_accuracy(self, np_rng):
        for snr in (-10.0, -3.0, 0.0, 7.5, 15.0):
            x = gen_synthetic_speech(int(np_rng.integers(1 << 30)), 1.0)
            d = gen_synthetic_noise("white", int(np_rng.integers(1 << 30)), 1.0)
            y, d_s = mix_at_snr(x, d, snr)
            x_used = y.samples - d_s.samples
            realized = 10 * np.log10(active_power(x_used) / active_power(d_s.samples))
            assert realized == pytest.approx(snr, abs=0.01)

    def test_peak_rescale_triggers_and_preserves_snr(self, np_rng):
        x = Waveform(0.9 * np.sin(2 * np.pi * 440 * np.arange(8000) / 16000), 16000)
        d = Waveform(signs(np_rng, 8000, scale=0.9), 16000)
        y, d_s = mix_at_snr(x, d, 0.0)
        assert np.max(np.abs(y.samples)) <= 0.99 + 1e-9
        x_used = y.samples - d_s.samples
        realized = 10 * np.log10(active_power(x_used) / active_power(d_s.samples))
        assert realized == pytest.approx(0.0, abs=0.01)

    def test_silent_inputs_rejected(self):
        x = Waveform(np.zeros(1000), 16000)
        d = Waveform(np.ones(1000), 16000)
        with pytest.raises(ValueError, match="silent"):
            mix_at_snr(x, d, 0.0)
        with pytest.raises(ValueError, match="silent"):
            mix_at_snr(d, x, 0.0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="length"):
            mix_at_snr(Waveform(np.ones(10), 16000), Waveform(np.ones(11), 16000), 0.0)


class TestSyntheticSpeech:
    def test_seeded_determinism(self):
        a = gen_synthetic_speech(42, 1.0)
        b = gen_synthetic_speech(42, 1.0)
        assert np.array_equal(a.samples, b.samples)
        c = gen_synthetic_speech(43, 1.0)
        assert not np.array_equal(a.samples, c.samples)

    def test_peak_normalized(self):
        w = gen_synthetic_speech(7, 2.0)
        assert np.max(np.abs(w.samples)) == pytest.approx(0.5, rel=1e-9)

    def test_energy_concentrated_below_4khz(self):
        for seed in (0, 1, 2, 3, 4):
            w = gen_synthetic_speech(seed, 2.0)
            spec = np.abs(np.fft.rfft(w.samples)) ** 2
            freqs = np.fft.rfftfreq(len(w.samples), 1 / 16000)
            frac = spec[freqs < 4000].sum() / spec.sum()
            assert frac >= 0.8

    def test_envelope_modulation_peak_in_syllabic_band(self):
        from scipy.ndimage import gaussian_filter1d

        for seed in (0, 1, 2, 3, 4):
            w = gen_synthetic_speech(seed, 4.0)
            env = gaussian_filter1d(np.abs(w.samples), sigma=80)
            env = env - env.mean()
            spec = np.abs(np.fft.rfft(env))
            freqs = np.fft.rfftfreq(len(env), 1 / 16000)
            band = (freqs >= 0.5) & (freqs <= 20)
            peak_freq = freqs[band][np.argmax(spec[band])]
            assert 2.0 <= peak_freq <= 6.0, f"seed {seed}: peak at {peak_freq:.2f} Hz"

    def test_too_short_rejected(self):
        with pytest.raises(ValueError, match="0.5"):
            gen_synthetic_speech(0, 0.2)


class TestSyntheticNoise:
    def test_white_flat_per_octave_psd(self):
        w = gen_synthetic_noise("white", 3, 4.0)
        bands = [(125, 250), (250, 500), (500, 1000), (1000, 2000), (2000, 4000)]
        levels = [10 * np.log10(octave_band_psd(w.samples, 16000, lo, hi))
                  for lo, hi in bands]
        assert max(levels) - min(levels) < 1.0

    def test_pink_slope(self):
        w = gen_synthetic_noise("pink", 5, 4.0)
        bands = [(100, 200), (200, 400), (400, 800), (800, 1600), (1600, 3200), (3200, 6000)]
        levels = [10 * np.log10(octave_band_psd(w.samples, 16000, lo, hi))
                  for lo, hi in bands]
        slopes = np.diff(levels)
        assert np.all(np.abs(slopes + 3.01) < 1.0)

    def test_modulated_has_slow_envelope(self):
        from scipy.ndimage import gaussian_filter1d

        w = gen_synthetic_noise("modulated", 11, 4.0)
        env = gaussian_filter1d(np.abs(w.samples), sigma=400)
        assert env.max() / env.min() > 1.5

    def test_determinism(self):
        for kind in ("white", "pink", "modulated"):
            a = gen_synthetic_noise(kind, 9, 1.0)
            b = gen_synthetic_noise(kind, 9, 1.0)
            assert np.array_equal(a.samples, b.samples)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            gen_synthetic_noise("brown", 0, 1.0)


class TestBuildDataset:
    def test_split_counts_hundred(self):
        assert split_counts(100, (0.7, 0.2, 0.1)) == (70, 20, 10)

    def test_manifest_contents(self, tmp_path):
        cfg = DatasetConfig(out_dir=tmp_path / "data", n_utterances=10, duration_s=1.0, seed=3)
        manifest = build_dataset(cfg)
        assert len(manifest.records) == 10
        assert len(manifest.split_records("train")) == 7
        assert len(manifest.split_records("val")) == 2
        assert len(manifest.split_records("test")) == 1
        for r in manifest.records:
            assert -10.0 <= r.snr_db <= 15.0
            assert manifest.resolve(r.clean).exists()
            assert manifest.resolve(r.noise).exists()
            w = load_wav(manifest.resolve(r.clean))
            assert len(w) == 16000

    def test_sources_disjoint_across_splits(self, tmp_path):
        cfg = DatasetConfig(out_dir=tmp_path / "data", n_utterances=12, duration_s=1.0, seed=1)
        manifest = build_dataset(cfg)
        seen = {}
        for r in manifest.records:
            for src in (r.clean, r.noise):
                assert seen.setdefault(src, r.split) == r.split

    def test_rerun_same_seed_identical_manifest(self, tmp_path):
        cfg_a = DatasetConfig(out_dir=tmp_path / "a", n_utterances=6, duration_s=1.0, seed=9)
        cfg_b = DatasetConfig(out_dir=tmp_path / "b", n_utterances=6, duration_s=1.0, seed=9)
        ma = build_dataset(cfg_a)
        mb = build_dataset(cfg_b)
        ra = [(r.id, r.clean, r.noise, r.snr_db, r.split, r.seed) for r in ma.records]
        rb = [(r.id, r.clean, r.noise, r.snr_db, r.split, r.seed) for r in mb.records]
        assert ra == rb
        for r in ma.records:
            xa = load_wav(ma.resolve(r.clean)).samples
            xb = load_wav(mb.resolve(r.clean)).samples
            assert np.array_equal(xa, xb)

    def test_manifest_roundtrip(self, tmp_path):
        cfg = DatasetConfig(out_dir=tmp_path / "data", n_utterances=4, duration_s=1.0, seed=2)
        manifest = build_dataset(cfg)
        loaded = MixManifest.load(tmp_path / "data" / "manifest.jsonl")
        assert loaded.sample_rate == manifest.sample_rate
        assert [r.id for r in loaded.records] == [r.id for r in manifest.records]

    def test_manifest_is_jsonl(self, tmp_path):
        cfg = DatasetConfig(out_dir=tmp_path / "data", n_utterances=3, duration_s=1.0)
        build_dataset(cfg)
        lines = (tmp_path / "data" / "manifest.jsonl").read_text().strip().splitlines()
        assert len(lines) == 4  # header + one record per line
        for line in lines:
            json.loads(line)
