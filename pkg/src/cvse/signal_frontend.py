"""Waveform I/O and a differentiable convolutional STFT/iSTFT front-end.

The analysis/synthesis transform is realized as a strided 1-D convolution
with fixed DFT-basis kernels so the whole front-end lives inside the
autodiff graph instead of calling out to a library FFT.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.io import wavfile

PCM_SCALE = 32768.0

SPECTROGRAM_DUMP_MAGIC = b"CSPC"


@dataclass
class Waveform:
    """Mono audio: samples nominally in [-1, 1] plus a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise ValueError(f"expected mono 1-D samples, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters. ``window`` names the analysis window kind.

    The only built-in window is "sqrt_hann": the square root of a Hann
    window evaluated on a half-sample-shifted grid. The shift keeps every
    tap strictly positive, so overlap-add synthesis can renormalize the
    signal edges exactly; the plain grid would zero the very first sample
    beyond recovery. At hop = frame_len/4 the squared window still
    overlap-adds to an exact constant.
    """

    fft_size: int
    frame_len: int
    hop: int
    window: str = "sqrt_hann"

    def __post_init__(self):
        if not (0 < self.hop <= self.frame_len <= self.fft_size):
            raise ValueError(
                f"need 0 < hop <= frame_len <= fft_size, got "
                f"hop={self.hop} frame_len={self.frame_len} fft_size={self.fft_size}"
            )
        if self.window != "sqrt_hann":
            raise ValueError(f"unknown window kind: {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_len:
            raise ValueError(
                f"signal of {n_samples} samples is shorter than one frame ({self.frame_len})"
            )
        return int(np.ceil((n_samples - self.frame_len) / self.hop)) + 1


def paper_stft_config() -> StftConfig:
    """25 ms frames, 6.25 ms shift, 512-point transform at 16 kHz."""
    return StftConfig(fft_size=512, frame_len=400, hop=100)


def desk_stft_config() -> StftConfig:
    """Small profile for fast tests."""
    return StftConfig(fft_size=256, frame_len=256, hop=64)


@dataclass
class ComplexSpectrogram:
    """Complex T-F matrix, (F, T) or (batch, F, T), F = fft_size/2 + 1."""

    data: torch.Tensor
    config: StftConfig

    def __post_init__(self):
        if not torch.is_complex(self.data):
            raise ValueError("spectrogram data must be a complex tensor")
        if self.data.shape[-2] != self.config.n_bins:
            raise ValueError(
                f"expected {self.config.n_bins} frequency rows, got {self.data.shape[-2]}"
            )

    @property
    def n_bins(self) -> int:
        return self.data.shape[-2]

    @property
    def n_frames(self) -> int:
        return self.data.shape[-1]


def analysis_window(config: StftConfig, dtype=np.float64) -> np.ndarray:
    """Strictly positive sqrt-Hann analysis window of length frame_len."""
    n = np.arange(config.frame_len, dtype=np.float64)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * (n + 0.5) / config.frame_len)
    return np.sqrt(hann).astype(dtype)


def load_wav(path) -> Waveform:
    """Read a mono PCM16 or float WAV file, scaling to [-1, 1]."""
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise ValueError(f"unsupported channel count: {data.shape[1]} (mono required)")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM_SCALE
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format: {data.dtype}")
    return Waveform(samples=samples, sample_rate=int(rate))


def save_wav(waveform: Waveform, path) -> None:
    """Write PCM16; values are clipped to [-1, 1 - 1/32768] before quantizing."""
    x = np.clip(waveform.samples, -1.0, 1.0 - 1.0 / PCM_SCALE)
    pcm = np.round(x * PCM_SCALE).astype(np.int16)
    wavfile.write(str(path), waveform.sample_rate, pcm)


def _dft_kernels(config: StftConfig, dtype: torch.dtype):
    """Fixed conv kernels: analysis (2F, 1, fft) and synthesis (2F, 1, fft)."""
    n_fft = config.fft_size
    n_bins = config.n_bins
    win = np.zeros(n_fft)
    win[: config.frame_len] = analysis_window(config)
    t = np.arange(n_fft)
    k = np.arange(n_bins)[:, None]
    cos = np.cos(2.0 * np.pi * k * t[None, :] / n_fft)
    sin = np.sin(2.0 * np.pi * k * t[None, :] / n_fft)
    fwd = np.concatenate([cos * win[None, :], -sin * win[None, :]], axis=0)
    # inverse real DFT with hermitian weights: interior bins count twice
    scale = np.full((n_bins, 1), 2.0 / n_fft)
    scale[0] = 1.0 / n_fft
    if n_fft % 2 == 0:
        scale[-1] = 1.0 / n_fft
    inv = np.concatenate([cos * scale * win[None, :], -sin * scale * win[None, :]], axis=0)
    to = {torch.float32: torch.float32, torch.float64: torch.float64}[dtype]
    return (
        torch.from_numpy(fwd).to(to).unsqueeze(1),
        torch.from_numpy(inv).to(to).unsqueeze(1),
        torch.from_numpy((win * win)[None, None, :]).to(to),
    )


class ConvStft(nn.Module):
    """STFT as a strided 1-D convolution with DFT-basis kernels."""

    def __init__(self, config: StftConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        fwd, inv, wsq = _dft_kernels(config, dtype)
        self.register_buffer("fwd_kernel", fwd)
        self.register_buffer("inv_kernel", inv)
        self.register_buffer("win_sq", wsq)

    def forward(self, signal: torch.Tensor) -> torch.Tensor:
        """(B, N) real -> (B, F, T) complex."""
        cfg = self.config
        if signal.dim() == 1:
            signal = signal.unsqueeze(0)
        n = signal.shape[-1]
        n_frames = cfg.n_frames(n)
        padded = (n_frames - 1) * cfg.hop + cfg.fft_size
        x = F.pad(signal.unsqueeze(1), (0, padded - n))
        out = F.conv1d(x, self.fwd_kernel.to(signal.dtype), stride=cfg.hop)
        n_bins = cfg.n_bins
        return torch.complex(out[:, :n_bins], out[:, n_bins:])

    def inverse(self, spec: torch.Tensor, out_len: int) -> torch.Tensor:
        """(B, F, T) complex -> (B, out_len) real, COLA-normalized overlap-add."""
        cfg = self.config
        if spec.dim() == 2:
            spec = spec.unsqueeze(0)
        comp = torch.cat([spec.real, spec.imag], dim=1)
        sig = F.conv_transpose1d(comp, self.inv_kernel.to(spec.real.dtype), stride=cfg.hop)
        n_frames = spec.shape[-1]
        ones = torch.ones(1, 1, n_frames, dtype=sig.dtype, device=sig.device)
        weight = F.conv_transpose1d(ones, self.win_sq.to(sig.dtype), stride=cfg.hop)
        sig = sig / weight.clamp_min(torch.finfo(sig.dtype).tiny)
        sig = sig.squeeze(1)
        if sig.shape[-1] >= out_len:
            return sig[..., :out_len]
        return F.pad(sig, (0, out_len - sig.shape[-1]))


def conv_stft(waveform, config: StftConfig, dtype: torch.dtype | None = None) -> ComplexSpectrogram:
    """Analyze a waveform (or (B, N) tensor) into a complex spectrogram.

    Frame t covers samples [t*hop, t*hop + frame_len); the signal tail is
    zero-padded to complete the last frame.
    """
    signal, _ = _as_signal_tensor(waveform, dtype)
    stft = ConvStft(config, dtype=signal.dtype)
    data = stft(signal)
    if not torch.is_tensor(waveform) or waveform.dim() == 1:
        data = data.squeeze(0)
    return ComplexSpectrogram(data=data, config=config)


def conv_istft(spec: ComplexSpectrogram, config: StftConfig, out_len: int,
               sample_rate: int | None = None):
    """Overlap-add synthesis back to out_len samples.

    Returns a Waveform when sample_rate is given, else the raw tensor.
    """
    if spec.config != config:
        raise ValueError(f"config mismatch: spectrogram has {spec.config}, requested {config}")
    stft = ConvStft(config, dtype=spec.data.real.dtype)
    sig = stft.inverse(spec.data, out_len)
    if spec.data.dim() == 2:
        sig = sig.squeeze(0)
    if sample_rate is None:
        return sig
    return Waveform(samples=sig.detach().cpu().numpy(), sample_rate=sample_rate)


def _as_signal_tensor(waveform, dtype):
    if isinstance(waveform, Waveform):
        arr = torch.from_numpy(np.ascontiguousarray(waveform.samples))
        sr = waveform.sample_rate
    elif torch.is_tensor(waveform):
        arr, sr = waveform, None
    else:
        arr, sr = torch.from_numpy(np.ascontiguousarray(waveform)), None
    if dtype is not None:
        arr = arr.to(dtype)
    elif not arr.is_floating_point():
        arr = arr.to(torch.float64)
    if arr.dim() == 1:
        arr = arr.unsqueeze(0)
    return arr, sr


def dump_spectrogram(spec: ComplexSpectrogram, path) -> None:
    """Debug dump: 16-byte header (magic, F, T, flags) + float32 (re, im) pairs, row-major."""
    data = spec.data.detach().cpu().numpy()
    if data.ndim != 2:
        raise ValueError("dump expects an unbatched (F, T) spectrogram")
    n_bins, n_frames = data.shape
    inter = np.empty((n_bins, n_frames, 2), dtype="<f4")
    inter[..., 0] = data.real
    inter[..., 1] = data.imag
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", SPECTROGRAM_DUMP_MAGIC, n_bins, n_frames, 0))
        fh.write(inter.tobytes())


def load_spectrogram_dump(path) -> np.ndarray:
    """Read a dump back as a complex64 (F, T) array."""
    raw = Path(path).read_bytes()
    magic, n_bins, n_frames, _flags = struct.unpack("<4sIII", raw[:16])
    if magic != SPECTROGRAM_DUMP_MAGIC:
        raise ValueError(f"bad spectrogram dump magic: {magic!r}")
    inter = np.frombuffer(raw[16:], dtype="<f4").reshape(n_bins, n_frames, 2)
    return (inter[..., 0] + 1j * inter[..., 1]).astype(np.complex64)
