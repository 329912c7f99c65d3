"""Synthetic corpus generation and SNR-controlled mixing.

Mixtures are built as y = x + g*d with the gain g set from active-sample
powers (samples below -40 dB of peak excluded, so silent gaps do not bias
the SNR). The scaled noise is truncated onto a 2^-31 amplitude grid before
adding: sums of grid values round exactly in float64, which makes
y - d_scaled reproduce the clean component bitwise, and truncation toward
zero keeps ||y - x|| <= g*||d|| strict. If the mixture would clip, all
components are rescaled jointly (never clipped) to a 0.99 peak.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signal_frontend import Waveform, save_wav

ACTIVE_FLOOR_DB = -40.0
PEAK_LIMIT = 0.99
MIX_GRID = float(2**31)


def _grid_trunc(x: np.ndarray) -> np.ndarray:
    return np.trunc(x * MIX_GRID) / MIX_GRID


def active_power(x: np.ndarray) -> float:
    """Mean square over samples within 40 dB of the peak."""
    peak = np.max(np.abs(x))
    if peak == 0.0:
        raise ValueError("silent input: cannot compute active power")
    mask = np.abs(x) >= peak * 10.0 ** (ACTIVE_FLOOR_DB / 20.0)
    return float(np.mean(x[mask] ** 2))


def snr_gain(x: np.ndarray, d: np.ndarray, snr_db: float) -> float:
    """Gain g such that (x, g*d) realizes the requested SNR on active power."""
    p_x = active_power(np.asarray(x))
    p_d = active_power(np.asarray(d))
    return float(np.sqrt(p_x / (p_d * 10.0 ** (snr_db / 10.0))))


def mix_at_snr(x: Waveform, d: Waveform, snr_db: float):
    """Mix clean x and noise d at snr_db; returns (y, d_scaled).

    The clean component used in the mixture is exactly y.samples -
    d_scaled.samples (bitwise); it differs from the input only by the
    amplitude grid and any joint peak rescale.
    """
    if len(x) != len(d):
        raise ValueError(f"length mismatch: clean {len(x)} vs noise {len(d)}")
    if x.sample_rate != d.sample_rate:
        raise ValueError("sample rate mismatch")
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    g = snr_gain(x.samples, d.samples, snr_db)
    x_q = _grid_trunc(np.asarray(x.samples, dtype=np.float64))
    d_s = _grid_trunc(g * np.asarray(d.samples, dtype=np.float64))
    y = x_q + d_s
    peak = np.max(np.abs(y))
    if peak > PEAK_LIMIT:
        c = PEAK_LIMIT / peak
        x_q = _grid_trunc(c * x_q)
        d_s = _grid_trunc(c * d_s)
        y = x_q + d_s
    sr = x.sample_rate
    return Waveform(y, sr), Waveform(d_s, sr)


def gen_synthetic_speech(seed: int, duration_s: float, sample_rate: int = 16000) -> Waveform:
    """Speech-like test signal: harmonic stack on a drifting fundamental with
    formant band emphasis, syllabic amplitude modulation and short silent
    gaps; peak-normalized to 0.5."""
    if duration_s < 0.5:
        raise ValueError("duration must be at least 0.5 s")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate

    # fundamental drifts between knots every 250 ms
    n_knots = max(2, int(np.ceil(duration_s * 4)) + 1)
    knots = rng.uniform(100.0, 300.0, n_knots)
    f0 = np.interp(np.arange(n), np.linspace(0, n - 1, n_knots), knots)
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate

    centers = rng.uniform(400.0, 3200.0, 3)
    widths = rng.uniform(150.0, 450.0, 3)

    def formant_gain(freq):
        return 0.05 + sum(np.exp(-0.5 * ((freq - c) / w) ** 2)
                          for c, w in zip(centers, widths))

    f0_mid = float(np.median(f0))
    sig = np.zeros(n)
    for k in range(1, 19):
        amp = formant_gain(k * f0_mid) / k
        sig += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    # syllabic modulation, rate within the 2-6 Hz band
    fm = rng.uniform(2.5, 5.5)
    env = 0.25 + 0.75 * (0.5 + 0.5 * np.sin(2 * np.pi * fm * t + rng.uniform(0, 2 * np.pi))) ** 2

    # one short gap per ~2 s with raised-cosine edges
    n_gaps = max(1, int(duration_s // 2))
    ramp = int(0.01 * sample_rate)
    for _ in range(n_gaps):
        gap_len = int(rng.uniform(0.08, 0.15) * sample_rate)
        start = int(rng.uniform(0.1, max(0.11, duration_s - 0.3)) * sample_rate)
        stop = min(start + gap_len, n)
        env[start:stop] = 0.0
        lo = max(0, start - ramp)
        env[lo:start] *= 0.5 * (1 + np.cos(np.pi * np.arange(start - lo) / ramp))
        hi = min(n, stop + ramp)
        env[stop:hi] *= 0.5 * (1 - np.cos(np.pi * np.arange(hi - stop) / ramp))

    sig *= env
    return Waveform(0.5 * sig / np.max(np.abs(sig)), sample_rate)


def gen_synthetic_noise(kind: str, seed: int, duration_s: float,
                        sample_rate: int = 16000) -> Waveform:
    """Noise test signal: white (flat PSD), pink (-3 dB/octave PSD) or
    amplitude-modulated white; peak-normalized to 0.5."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    white = rng.standard_normal(n)
    if kind == "white":
        sig = white
    elif kind == "pink":
        spec = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
        spec *= 1.0 / np.sqrt(np.maximum(freqs, 40.0))
        spec[0] = 0.0
        sig = np.fft.irfft(spec, n)
    elif kind == "modulated":
        slow = rng.standard_normal(n)
        spec = np.fft.rfft(slow)
        freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
        spec[freqs > 1.5] = 0.0
        slow = np.fft.irfft(spec, n)
        slow = slow / (np.std(slow) + 1e-12)
        sig = white * np.exp(0.6 * slow)
    else:
        raise ValueError(f"unknown noise kind: {kind!r}")
    return Waveform(0.5 * sig / np.max(np.abs(sig)), sample_rate)


NOISE_KINDS = ("white", "pink", "modulated")


@dataclass
class MixRecord:
    id: str
    clean: str
    noise: str
    snr_db: float
    split: str
    seed: int


@dataclass
class MixManifest:
    sample_rate: int
    records: list = field(default_factory=list)
    root: Path | None = None

    def split_records(self, split: str) -> list:
        return [r for r in self.records if r.split == split]

    def resolve(self, rel: str) -> Path:
        base = self.root if self.root is not None else Path(".")
        return base / rel

    def save(self, path) -> None:
        path = Path(path)
        with open(path, "w") as fh:
            fh.write(json.dumps({"sample_rate": self.sample_rate}) + "\n")
            for r in self.records:
                fh.write(json.dumps({
                    "id": r.id, "clean": r.clean, "noise": r.noise,
                    "snr_db": r.snr_db, "split": r.split, "seed": r.seed,
                }) + "\n")
        self.root = path.parent

    @classmethod
    def load(cls, path) -> "MixManifest":
        path = Path(path)
        with open(path) as fh:
            header = json.loads(fh.readline())
            records = [MixRecord(**json.loads(line)) for line in fh if line.strip()]
        return cls(sample_rate=header["sample_rate"], records=records, root=path.parent)


@dataclass
class DatasetConfig:
    out_dir: Path
    n_utterances: int = 20
    duration_s: float = 2.0
    sample_rate: int = 16000
    seed: int = 0
    snr_range: tuple = (-10.0, 15.0)
    splits: tuple = (0.7, 0.2, 0.1)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        if self.n_utterances < 1:
            raise ValueError("need at least one utterance")
        if abs(sum(self.splits) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


def split_counts(n: int, fractions) -> tuple:
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 0:
        raise ValueError("split fractions produce negative counts")
    return n_train, n_val, n_test


def build_dataset(config: DatasetConfig) -> MixManifest:
    """Generate sources, assign 70/20/10 splits by source, draw SNRs and
    write the manifest. One noise source per utterance keeps splits disjoint
    by construction."""
    rng = np.random.default_rng(config.seed)
    out = config.out_dir
    (out / "clean").mkdir(parents=True, exist_ok=True)
    (out / "noise").mkdir(parents=True, exist_ok=True)

    n = config.n_utterances
    n_train, n_val, _ = split_counts(n, config.splits)
    order = rng.permutation(n)
    split_of = {}
    for rank, idx in enumerate(order):
        split_of[idx] = "train" if rank < n_train else (
            "val" if rank < n_train + n_val else "test")

    records = []
    lo, hi = config.snr_range
    for i in range(n):
        speech_seed = int(rng.integers(0, 2**31))
        noise_seed = int(rng.integers(0, 2**31))
        mix_seed = int(rng.integers(0, 2**31))
        kind = NOISE_KINDS[i % len(NOISE_KINDS)]
        clean_rel = f"clean/utt_{i:04d}.wav"
        noise_rel = f"noise/noise_{i:04d}.wav"
        save_wav(gen_synthetic_speech(speech_seed, config.duration_s, config.sample_rate),
                 out / clean_rel)
        save_wav(gen_synthetic_noise(kind, noise_seed, config.duration_s, config.sample_rate),
                 out / noise_rel)
        records.append(MixRecord(
            id=f"utt_{i:04d}",
            clean=clean_rel,
            noise=noise_rel,
            snr_db=float(rng.uniform(lo, hi)),
            split=split_of[i],
            seed=mix_seed,
        ))

    manifest = MixManifest(sample_rate=config.sample_rate, records=records, root=out)
    manifest.save(out / "manifest.jsonl")
    return manifest
