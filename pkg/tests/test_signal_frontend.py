import numpy as np
import pytest
import torch
from scipy.io import wavfile

from cvse.signal_frontend import (
    ComplexSpectrogram,
    StftConfig,
    Waveform,
    analysis_window,
    conv_istft,
    conv_stft,
    desk_stft_config,
    dump_spectrogram,
    load_spectrogram_dump,
    load_wav,
    paper_stft_config,
    save_wav,
)


def direct_dft_frame(x, config, frame_idx):
    """Independent oracle: explicit windowed DFT of one frame."""
    start = frame_idx * config.hop
    frame = np.zeros(config.fft_size)
    seg = x[start : start + config.frame_len]
    frame[: len(seg)] = seg * analysis_window(config)[: len(seg)]
    k = np.arange(config.n_bins)[:, None]
    n = np.arange(config.fft_size)[None, :]
    basis = np.exp(-2j * np.pi * k * n / config.fft_size)
    return basis @ frame


class TestWavIo:
    def test_pcm16_full_scale(self, tmp_path):
        path = tmp_path / "fs.wav"
        wavfile.write(path, 16000, np.array([32767, 0, -32768], dtype=np.int16))
        w = load_wav(path)
        assert w.sample_rate == 16000
        assert w.samples[0] == pytest.approx(32767 / 32768, abs=0)
        assert w.samples[1] == 0.0
        assert w.samples[2] == -1.0

    def test_roundtrip_quantization_bound(self, tmp_path, np_rng):
        x = Waveform(np_rng.uniform(-1.0, 1.0, 4000), 16000)
        path = tmp_path / "rt.wav"
        save_wav(x, path)
        y = load_wav(path)
        assert len(y) == 4000
        assert np.max(np.abs(y.samples - x.samples)) <= 1.0 / 32768

    def test_stereo_rejected(self, tmp_path, np_rng):
        path = tmp_path / "stereo.wav"
        wavfile.write(path, 48000, np_rng.integers(-100, 100, (1000, 2)).astype(np.int16))
        with pytest.raises(ValueError, match="channel count"):
            load_wav(path)

    def test_save_zeros(self, tmp_path):
        path = tmp_path / "z.wav"
        save_wav(Waveform(np.zeros(100), 16000), path)
        assert np.all(load_wav(path).samples == 0.0)

    def test_save_clips_overrange(self, tmp_path):
        path = tmp_path / "clip.wav"
        save_wav(Waveform(np.array([2.0, -3.0]), 16000), path)
        _, pcm = wavfile.read(path)
        assert pcm[0] == 32767
        assert pcm[1] == -32768

    def test_one_second_sample_count(self, tmp_path, np_rng):
        path = tmp_path / "1s.wav"
        save_wav(Waveform(np_rng.uniform(-0.5, 0.5, 16000), 16000), path)
        assert len(load_wav(path)) == 16000

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            Waveform(np.array([0.0, np.nan]), 16000)

    def test_float32_wav_supported(self, tmp_path, np_rng):
        path = tmp_path / "f32.wav"
        x = np_rng.uniform(-0.5, 0.5, 500).astype(np.float32)
        wavfile.write(path, 16000, x)
        w = load_wav(path)
        assert np.allclose(w.samples, x, atol=0)


class TestConvStft:
    def test_bin_centered_cosine_peaks_at_bin(self):
        cfg = paper_stft_config()
        k = 37
        n = np.arange(16000)
        x = np.cos(2 * np.pi * k * n / cfg.fft_size)
        spec = conv_stft(Waveform(x, 16000), cfg)
        mag = spec.data.abs().numpy()
        for t in range(2, spec.n_frames - 2):
            assert np.argmax(mag[:, t]) == k

    def test_zero_input_zero_output(self):
        cfg = desk_stft_config()
        spec = conv_stft(Waveform(np.zeros(2048), 16000), cfg)
        assert torch.all(spec.data == 0)

    def test_impulse_flat_magnitude(self):
        cfg = paper_stft_config()
        t_idx, pos = 3, cfg.frame_len // 2
        x = np.zeros(8000)
        x[t_idx * cfg.hop + pos] = 1.0
        spec = conv_stft(Waveform(x, 16000), cfg)
        mag = spec.data.abs().numpy()[:, t_idx]
        w_center = analysis_window(cfg)[pos]
        assert np.allclose(mag, w_center, rtol=1e-10)

    def test_too_short_signal_raises(self):
        cfg = desk_stft_config()
        with pytest.raises(ValueError, match="shorter than one frame"):
            conv_stft(Waveform(np.zeros(cfg.frame_len - 1), 16000), cfg)

    def test_matches_direct_dft_oracle(self, np_rng):
        cfg = desk_stft_config()
        x = np_rng.uniform(-1, 1, 1600)
        spec = conv_stft(Waveform(x, 16000), cfg).data.numpy()
        for t in (0, 4, 11):
            oracle = direct_dft_frame(x, cfg, t)
            assert np.allclose(spec[:, t], oracle, atol=1e-10)

    def test_parseval_on_one_frame(self, np_rng):
        # energy of the hermitian-extended spectrum equals fft_size times
        # the windowed frame energy
        cfg = desk_stft_config()
        x = np_rng.uniform(-1, 1, cfg.frame_len)
        spec = conv_stft(Waveform(x, 16000), cfg).data.numpy()[:, 0]
        weights = np.full(cfg.n_bins, 2.0)
        weights[0] = weights[-1] = 1.0
        spec_energy = np.sum(weights * np.abs(spec) ** 2)
        frame_energy = np.sum((x * analysis_window(cfg)) ** 2)
        assert spec_energy == pytest.approx(cfg.fft_size * frame_energy, rel=1e-12)

    def test_linearity(self, np_rng):
        cfg = desk_stft_config()
        x = np_rng.uniform(-1, 1, 2000)
        y = np_rng.uniform(-1, 1, 2000)
        a, b = 1.7, -0.4
        s_mix = conv_stft(Waveform(a * x + b * y, 16000), cfg).data
        s_sep = a * conv_stft(Waveform(x, 16000), cfg).data + b * conv_stft(
            Waveform(y, 16000), cfg
        ).data
        assert torch.allclose(s_mix, s_sep, atol=1e-12)

    def test_framing_arithmetic_paper_profile(self):
        cfg = paper_stft_config()
        assert cfg.n_frames(32000) == 317
        assert cfg.n_frames(16000) == 157


class TestConvIstft:
    @pytest.mark.parametrize("cfg", [paper_stft_config(), desk_stft_config()])
    def test_perfect_reconstruction_float64(self, cfg, np_rng):
        x = np_rng.uniform(-0.9, 0.9, 16000)
        spec = conv_stft(Waveform(x, 16000), cfg)
        y = conv_istft(spec, cfg, 16000, sample_rate=16000)
        rel = np.linalg.norm(y.samples - x) / np.linalg.norm(x)
        assert rel < 1e-6

    def test_reconstruction_float32(self, np_rng):
        cfg = paper_stft_config()
        x = np_rng.uniform(-0.9, 0.9, 16000)
        spec = conv_stft(Waveform(x, 16000), cfg, dtype=torch.float32)
        y = conv_istft(spec, cfg, 16000, sample_rate=16000)
        rel = np.linalg.norm(y.samples - x) / np.linalg.norm(x)
        assert rel < 1e-3

    def test_awkward_length_reconstruction(self, np_rng):
        # length not aligned to the hop grid
        cfg = desk_stft_config()
        x = np_rng.uniform(-0.9, 0.9, 2000 + 37)
        spec = conv_stft(Waveform(x, 16000), cfg)
        y = conv_istft(spec, cfg, len(x), sample_rate=16000)
        rel = np.linalg.norm(y.samples - x) / np.linalg.norm(x)
        assert rel < 1e-6

    def test_zero_spectrogram_zero_waveform(self):
        cfg = desk_stft_config()
        spec = ComplexSpectrogram(
            torch.zeros(cfg.n_bins, 10, dtype=torch.complex128), cfg
        )
        y = conv_istft(spec, cfg, 800, sample_rate=16000)
        assert np.all(y.samples == 0.0)

    def test_config_mismatch_raises(self, np_rng):
        spec = conv_stft(Waveform(np_rng.uniform(-1, 1, 2000), 16000), desk_stft_config())
        with pytest.raises(ValueError, match="config mismatch"):
            conv_istft(spec, paper_stft_config(), 2000)

    def test_out_len_padding(self, np_rng):
        cfg = desk_stft_config()
        x = np_rng.uniform(-1, 1, 1000)
        spec = conv_stft(Waveform(x, 16000), cfg)
        y = conv_istft(spec, cfg, 1500, sample_rate=16000)
        assert len(y) == 1500


class TestStftConfig:
    def test_invalid_geometry_rejected(self):
        with pytest.raises(ValueError):
            StftConfig(fft_size=256, frame_len=300, hop=64)
        with pytest.raises(ValueError):
            StftConfig(fft_size=256, frame_len=128, hop=256)

    def test_window_strictly_positive(self):
        for cfg in (paper_stft_config(), desk_stft_config()):
            assert analysis_window(cfg).min() > 0


class TestSpectrogramDump:
    def test_roundtrip(self, tmp_path, np_rng):
        cfg = desk_stft_config()
        x = np_rng.uniform(-1, 1, 2000)
        spec = conv_stft(Waveform(x, 16000), cfg, dtype=torch.float32)
        path = tmp_path / "spec.bin"
        dump_spectrogram(spec, path)
        back = load_spectrogram_dump(path)
        assert back.shape == (spec.n_bins, spec.n_frames)
        assert np.array_equal(back, spec.data.numpy().astype(np.complex64))

    def test_header_layout(self, tmp_path):
        cfg = desk_stft_config()
        spec = ComplexSpectrogram(torch.zeros(cfg.n_bins, 7, dtype=torch.complex64), cfg)
        path = tmp_path / "spec.bin"
        dump_spectrogram(spec, path)
        raw = path.read_bytes()
        assert raw[:4] == b"CSPC"
        assert len(raw) == 16 + cfg.n_bins * 7 * 2 * 4

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"JUNK" + b"\x00" * 12)
        with pytest.raises(ValueError, match="magic"):
            load_spectrogram_dump(path)
