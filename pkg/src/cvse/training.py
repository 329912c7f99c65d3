"""Three-stage training orchestration, checkpointing, and the inference path.

Stage 1 trains the clean and noise VAEs on their own corpora. Stage 2
freezes them (gradients off, batch norm in eval mode) and trains the noisy
encoder with the latent alignment loss on (noisy, clean, noise) triples.
Stage 3 freezes everything except the clean decoder and the critic and
alternates least-squares adversarial updates, sampling latents from the
frozen noisy encoder.

Checkpoints are a single-file container: a 16-byte preamble, a JSON index
(name -> offset/shape/dtype plus stage, step, config snapshot and RNG
state), then the raw little-endian arrays. Loading restores every array
bit-exactly, so a resumed run continues with the exact next-step loss.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .complex_gaussian import sample
from .data_mixing import MixManifest, mix_at_snr
from .losses import (
    gan_discriminator_loss,
    gan_generator_loss,
    latent_loss,
    si_snr,
    stage1_loss,
)
from .models import (
    STAGE_GROUPS,
    EnhancementModel,
    ModelConfig,
    freeze_all_except,
    set_requires_grad,
)
from .signal_frontend import ComplexSpectrogram, ConvStft, StftConfig, Waveform, load_wav

CHECKPOINT_MAGIC = b"CVCK"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss is encountered; training never
    silently continues past one."""


@dataclass
class TrainConfig:
    profile: str = "desk"
    stage: int = 1
    steps: int = 500
    batch_size: int = 8
    lr: float = 1e-3
    alpha: float = 0.25
    seed: int = 0
    data_manifest: str | Path | None = None
    ckpt_dir: str | Path = "checkpoints"
    ckpt_every: int = 500
    crop_s: float = 0.75
    n_kl_samples: int = 1
    grad_clip: float = 5.0
    dtype: str = "float32"
    threads: int = 1

    def __post_init__(self):
        if self.steps <= 0:
            raise ValueError("steps must be > 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.profile not in ("paper", "desk"):
            raise ValueError(f"unknown profile: {self.profile!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        self.ckpt_dir = Path(self.ckpt_dir)
        if self.data_manifest is not None:
            self.data_manifest = Path(self.data_manifest)

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float32 if self.dtype == "float32" else torch.float64


# --------------------------------------------------------------------------
# checkpoint container


@dataclass
class CheckpointState:
    stage: int
    step: int
    model_config: ModelConfig
    arrays: dict
    train_config: dict = field(default_factory=dict)
    numpy_rng: dict | None = None
    path: Path | None = None


def _model_config_to_dict(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    d["stft"] = asdict(cfg.stft)
    return d


def _model_config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    stft = StftConfig(**d.pop("stft"))
    d["channels"] = tuple(d["channels"])
    d["kernel"] = tuple(d["kernel"])
    d["stride"] = tuple(d["stride"])
    return ModelConfig(stft=stft, **d)


def save_checkpoint(state: CheckpointState, path) -> Path:
    """Write the single-file container; returns the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    index = []
    offset = 0
    blobs = []
    for name in sorted(state.arrays):
        arr = np.ascontiguousarray(state.arrays[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        index.append({
            "name": name,
            "offset": offset,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
        })
        blobs.append(blob)
        offset += len(blob)
    meta = {
        "stage": state.stage,
        "step": state.step,
        "model_config": _model_config_to_dict(state.model_config),
        "train_config": {k: (str(v) if isinstance(v, Path) else v)
                         for k, v in state.train_config.items()},
        "numpy_rng": state.numpy_rng,
        "arrays": index,
    }
    header = json.dumps(meta).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIQ", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    state.path = path
    return path


def load_checkpoint(path) -> CheckpointState:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    magic, version, hlen = struct.unpack("<4sIQ", raw[:16])
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    meta = json.loads(raw[16 : 16 + hlen])
    base = 16 + hlen
    arrays = {}
    for entry in meta["arrays"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        start = base + entry["offset"]
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return CheckpointState(
        stage=meta["stage"],
        step=meta["step"],
        model_config=_model_config_from_dict(meta["model_config"]),
        arrays=arrays,
        train_config=meta.get("train_config", {}),
        numpy_rng=meta.get("numpy_rng"),
        path=path,
    )


def model_arrays(model: EnhancementModel) -> dict:
    return {f"model/{k}": v.detach().cpu().numpy().copy()
            for k, v in model.state_dict().items()}


def load_model_arrays(model: EnhancementModel, arrays: dict) -> None:
    """Restore model parameters/buffers, validating shapes array by array."""
    state = model.state_dict()
    new_state = {}
    for key, tensor in state.items():
        name = f"model/{key}"
        if name not in arrays:
            raise ValueError(f"checkpoint is missing array {name}")
        arr = arrays[name]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise ValueError(
                f"shape mismatch for {name}: checkpoint {tuple(arr.shape)} "
                f"vs model {tuple(tensor.shape)}"
            )
        new_state[key] = torch.from_numpy(arr.copy()).to(tensor.dtype)
    model.load_state_dict(new_state)


def optimizer_arrays(optimizers: dict, model: EnhancementModel) -> dict:
    """Flatten Adam state to named arrays keyed by parameter name."""
    param_names = {id(p): n for n, p in model.named_parameters()}
    out = {}
    for group_name, opt in optimizers.items():
        for p, st in opt.state.items():
            pname = param_names[id(p)]
            for key in ("exp_avg", "exp_avg_sq"):
                out[f"opt/{group_name}/{pname}/{key}"] = st[key].detach().cpu().numpy().copy()
            out[f"opt/{group_name}/{pname}/step"] = np.asarray(
                float(st["step"]), dtype=np.float64)
    return out


def load_optimizer_arrays(optimizers: dict, model: EnhancementModel, arrays: dict) -> None:
    params = dict(model.named_parameters())
    for group_name, opt in optimizers.items():
        prefix = f"opt/{group_name}/"
        seen = set()
        for name in arrays:
            if not name.startswith(prefix):
                continue
            pname, key = name[len(prefix):].rsplit("/", 1)
            if pname in seen:
                continue
            if pname not in params:
                raise ValueError(f"optimizer state for unknown parameter {pname}")
            seen.add(pname)
            p = params[pname]
            st = opt.state.setdefault(p, {})
            st["step"] = torch.tensor(float(arrays[f"{prefix}{pname}/step"]))
            for k in ("exp_avg", "exp_avg_sq"):
                arr = arrays[f"{prefix}{pname}/{k}"]
                if tuple(arr.shape) != tuple(p.shape):
                    raise ValueError(f"shape mismatch for {prefix}{pname}/{k}")
                st[k] = torch.from_numpy(arr.copy()).to(p.dtype)


# --------------------------------------------------------------------------
# data plumbing


@dataclass
class Corpus:
    """In-memory desk-scale corpus: aligned (clean, noise_scaled, noisy)."""

    sample_rate: int
    clean: list
    noise: list
    noisy: list
    ids: list

    @classmethod
    def from_manifest(cls, manifest: MixManifest, split: str) -> "Corpus":
        records = manifest.split_records(split)
        if not records:
            raise ValueError(f"no records in split {split!r}")
        clean, noise, noisy, ids = [], [], [], []
        for r in records:
            x = load_wav(manifest.resolve(r.clean))
            d = load_wav(manifest.resolve(r.noise))
            y, d_s = mix_at_snr(x, d, r.snr_db)
            x_used = y.samples - d_s.samples
            clean.append(x_used)
            noise.append(d_s.samples)
            noisy.append(y.samples)
            ids.append(r.id)
        return cls(sample_rate=manifest.sample_rate, clean=clean, noise=noise,
                   noisy=noisy, ids=ids)

    def __len__(self):
        return len(self.clean)


class BatchSampler:
    """Seeded epoch shuffling plus random crops; deterministic given the rng."""

    def __init__(self, n_items: int, batch_size: int, rng: np.random.Generator):
        self.n_items = n_items
        self.batch_size = batch_size
        self.rng = rng
        self._order = []

    def next_indices(self) -> list:
        out = []
        while len(out) < self.batch_size:
            if not self._order:
                self._order = list(self.rng.permutation(self.n_items))
            out.append(self._order.pop())
        return out

    def crop(self, arrays: list, idxs: list, crop_len: int) -> np.ndarray:
        batch = np.zeros((len(idxs), crop_len))
        for row, i in enumerate(idxs):
            x = arrays[i]
            if len(x) <= crop_len:
                batch[row, : len(x)] = x
            else:
                start = int(self.rng.integers(0, len(x) - crop_len + 1))
                batch[row] = x[start : start + crop_len]
        return batch

    def crop_aligned(self, array_lists: list, idxs: list, crop_len: int) -> list:
        outs = [np.zeros((len(idxs), crop_len)) for _ in array_lists]
        for row, i in enumerate(idxs):
            length = len(array_lists[0][i])
            if length <= crop_len:
                for out, arrays in zip(outs, array_lists):
                    out[row, : length] = arrays[i]
            else:
                start = int(self.rng.integers(0, length - crop_len + 1))
                for out, arrays in zip(outs, array_lists):
                    out[row] = arrays[i][start : start + crop_len]
        return outs


class LossLog:
    """Append-only CSV: step, stage, component, value."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists():
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(["step", "stage", "component", "value"])

    def write(self, step: int, stage: int, components: dict) -> None:
        with open(self.path, "a", newline="") as fh:
            w = csv.writer(fh)
            for name, value in components.items():
                w.writerow([step, stage, name, f"{float(value):.10g}"])


# --------------------------------------------------------------------------
# trainer


def _check_finite(value: float, step: int, stage: int, components: dict,
                  ckpt_dir: Path) -> None:
    if np.isfinite(value):
        return
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    dump = ckpt_dir / f"diverged_stage{stage}_step{step}.json"
    dump.write_text(json.dumps(
        {"stage": stage, "step": step,
         "components": {k: float(v) for k, v in components.items()}}, indent=2))
    raise TrainingDiverged(
        f"non-finite loss {value} at stage {stage} step {step}; diagnostics in {dump}")


class Trainer:
    """Holds the model, optimizers, RNG streams and the STFT front-end."""

    def __init__(self, config: TrainConfig, state: CheckpointState | None = None):
        torch.set_num_threads(max(1, config.threads))
        self.config = config
        self.model_config = (state.model_config if state is not None
                             else ModelConfig.from_profile(config.profile))
        torch.manual_seed(config.seed)
        self.model = EnhancementModel(self.model_config, dtype=config.torch_dtype)
        self.stft = ConvStft(self.model_config.stft, dtype=config.torch_dtype)
        self.noise_gen = torch.Generator().manual_seed(config.seed + 1)
        self.data_rng = np.random.default_rng(config.seed + 2)
        self.step = 0
        self.optimizers: dict = {}
        if state is not None:
            load_model_arrays(self.model, state.arrays)

    # -- plumbing ----------------------------------------------------------
    def _wave_batch(self, arr: np.ndarray) -> torch.Tensor:
        return torch.from_numpy(arr).to(self.config.torch_dtype)

    def _spec(self, wave: torch.Tensor) -> ComplexSpectrogram:
        return ComplexSpectrogram(data=self.stft(wave), config=self.model_config.stft)

    def _istft(self, spec: ComplexSpectrogram, out_len: int) -> torch.Tensor:
        return self.stft.inverse(spec.data, out_len)

    def _adam(self, group: str, modules: list) -> torch.optim.Adam:
        params = [p for m in modules for p in m.parameters()]
        opt = torch.optim.Adam(params, lr=self.config.lr)
        self.optimizers[group] = opt
        return opt

    def _clip(self, modules: list) -> None:
        if self.config.grad_clip > 0:
            params = [p for m in modules for p in m.parameters() if p.requires_grad]
            torch.nn.utils.clip_grad_norm_(params, self.config.grad_clip)

    def _crop_len(self, corpus: Corpus) -> int:
        want = int(round(self.config.crop_s * corpus.sample_rate))
        shortest = min(len(x) for x in corpus.clean)
        return max(self.model_config.stft.frame_len, min(want, shortest))

    def snapshot(self, stage: int, extra_arrays: dict | None = None) -> CheckpointState:
        arrays = model_arrays(self.model)
        arrays.update(optimizer_arrays(self.optimizers, self.model))
        arrays["rng/torch_noise"] = self.noise_gen.get_state().numpy().copy()
        if extra_arrays:
            arrays.update(extra_arrays)
        return CheckpointState(
            stage=stage,
            step=self.step,
            model_config=self.model_config,
            arrays=arrays,
            train_config={k: (str(v) if isinstance(v, Path) else v)
                          for k, v in asdict(self.config).items()},
            numpy_rng=self.data_rng.bit_generator.state,
        )

    def restore_run_state(self, state: CheckpointState) -> None:
        """Resume counters and RNG streams from a same-stage checkpoint."""
        self.step = state.step
        if "rng/torch_noise" in state.arrays:
            self.noise_gen.set_state(
                torch.from_numpy(state.arrays["rng/torch_noise"].copy()))
        if state.numpy_rng is not None:
            self.data_rng.bit_generator.state = state.numpy_rng
        load_optimizer_arrays(self.optimizers, self.model, state.arrays)


def _resolve_ckpt(config: TrainConfig, stage: int, explicit) -> CheckpointState:
    if isinstance(explicit, CheckpointState):
        return explicit
    path = Path(explicit) if explicit is not None else (
        Path(config.ckpt_dir) / f"stage{stage}.ckpt")
    if not path.exists():
        raise FileNotFoundError(f"missing stage-{stage} checkpoint: {path}")
    return load_checkpoint(path)


def run_stage1(config: TrainConfig, manifest: MixManifest | None = None,
               resume: CheckpointState | str | Path | None = None) -> CheckpointState:
    """Train the clean and noise VAEs, interleaving one step of each."""
    manifest = manifest or MixManifest.load(config.data_manifest)
    corpus = Corpus.from_manifest(manifest, "train")
    state = None
    if resume is not None:
        state = resume if isinstance(resume, CheckpointState) else load_checkpoint(resume)
        if state.stage != 1:
            raise ValueError(f"resume checkpoint is for stage {state.stage}, not 1")
    tr = Trainer(config, state)
    opt_c = tr._adam("clean_vae", [tr.model.clean_enc, tr.model.clean_dec])
    opt_n = tr._adam("noise_vae", [tr.model.noise_enc, tr.model.noise_dec])
    if state is not None:
        tr.restore_run_state(state)
    freeze_all_except(tr.model, STAGE_GROUPS[1])
    log = LossLog(Path(config.ckpt_dir) / "loss_log.csv")
    sampler = BatchSampler(len(corpus), config.batch_size, tr.data_rng)
    crop_len = tr._crop_len(corpus)

    for _ in range(config.steps):
        tr.step += 1
        comps = {}
        for tag, arrays, enc, dec, opt, mods in (
            ("c", corpus.clean, tr.model.encode_clean, tr.model.decode_clean, opt_c,
             [tr.model.clean_enc, tr.model.clean_dec]),
            ("n", corpus.noise, tr.model.encode_noise, tr.model.decode_noise, opt_n,
             [tr.model.noise_enc, tr.model.noise_dec]),
        ):
            batch = sampler.crop(arrays, sampler.next_indices(), crop_len)
            wave = tr._wave_batch(batch)
            out = enc(tr._spec(wave))
            noise = torch.randn(tuple(out.posterior.shape) + (2,),
                                generator=tr.noise_gen, dtype=tr.config.torch_dtype)
            z = sample(out.posterior, noise)
            recon = tr._istft(dec(z, out.skips), crop_len)
            loss = stage1_loss(out.posterior, recon, wave,
                               n_samples=config.n_kl_samples, generator=tr.noise_gen)
            opt.zero_grad()
            loss.total.backward()
            tr._clip(mods)
            opt.step()
            comps[f"{tag}_total"] = loss.item()
            comps[f"{tag}_kl"] = loss.component("kl")
            comps[f"{tag}_si_snr"] = loss.component("si_snr")
        log.write(tr.step, 1, comps)
        _check_finite(comps["c_total"] + comps["n_total"], tr.step, 1, comps,
                      Path(config.ckpt_dir))
        if config.ckpt_every and tr.step % config.ckpt_every == 0:
            save_checkpoint(tr.snapshot(1),
                            Path(config.ckpt_dir) / f"stage1_step{tr.step}.ckpt")

    final = tr.snapshot(1)
    save_checkpoint(final, Path(config.ckpt_dir) / "stage1.ckpt")
    return final


def run_stage2(config: TrainConfig, manifest: MixManifest | None = None,
               stage1_ckpt=None,
               resume: CheckpointState | str | Path | None = None) -> CheckpointState:
    """Train the noisy encoder against the frozen stage-1 posteriors."""
    manifest = manifest or MixManifest.load(config.data_manifest)
    corpus = Corpus.from_manifest(manifest, "train")
    if resume is not None:
        state = resume if isinstance(resume, CheckpointState) else load_checkpoint(resume)
        if state.stage != 2:
            raise ValueError(f"resume checkpoint is for stage {state.stage}, not 2")
    else:
        state = _resolve_ckpt(config, 1, stage1_ckpt)
    tr = Trainer(config, state)
    opt = tr._adam("noisy_enc", [tr.model.noisy_enc])
    if resume is not None:
        tr.restore_run_state(state)
    freeze_all_except(tr.model, STAGE_GROUPS[2])
    log = LossLog(Path(config.ckpt_dir) / "loss_log.csv")
    sampler = BatchSampler(len(corpus), config.batch_size, tr.data_rng)
    crop_len = tr._crop_len(corpus)

    for _ in range(config.steps):
        tr.step += 1
        idxs = sampler.next_indices()
        x_np, d_np, y_np = sampler.crop_aligned(
            [corpus.clean, corpus.noise, corpus.noisy], idxs, crop_len)
        x, d, y = (tr._wave_batch(a) for a in (x_np, d_np, y_np))
        with torch.no_grad():
            clean_out = tr.model.encode_clean(tr._spec(x))
            noise_out = tr.model.encode_noise(tr._spec(d))
        noisy_out = tr.model.encode_noisy(tr._spec(y))
        loss = latent_loss(
            noisy_out.posterior, clean_out.posterior, noise_out.posterior,
            clean_out.skips, noisy_out.skips, alpha=config.alpha,
            n_samples=config.n_kl_samples, generator=tr.noise_gen)
        opt.zero_grad()
        loss.total.backward()
        tr._clip([tr.model.noisy_enc])
        opt.step()
        comps = {"ns_total": loss.item(), "ns_kl": loss.component("kl"),
                 "ns_kl_clean": loss.component("kl_clean"),
                 "ns_kl_noise": loss.component("kl_noise"),
                 "ns_residual": loss.component("residual")}
        log.write(tr.step, 2, comps)
        _check_finite(comps["ns_total"], tr.step, 2, comps, Path(config.ckpt_dir))
        if config.ckpt_every and tr.step % config.ckpt_every == 0:
            save_checkpoint(tr.snapshot(2),
                            Path(config.ckpt_dir) / f"stage2_step{tr.step}.ckpt")

    final = tr.snapshot(2)
    save_checkpoint(final, Path(config.ckpt_dir) / "stage2.ckpt")
    return final


def run_stage3(config: TrainConfig, manifest: MixManifest | None = None,
               stage2_ckpt=None,
               resume: CheckpointState | str | Path | None = None) -> CheckpointState:
    """Adversarially refine the clean decoder on frozen noisy-encoder latents.

    Each iteration performs exactly one critic update and one generator
    update; the counts are recorded in the checkpoint."""
    manifest = manifest or MixManifest.load(config.data_manifest)
    corpus = Corpus.from_manifest(manifest, "train")
    if resume is not None:
        state = resume if isinstance(resume, CheckpointState) else load_checkpoint(resume)
        if state.stage != 3:
            raise ValueError(f"resume checkpoint is for stage {state.stage}, not 3")
    else:
        state = _resolve_ckpt(config, 2, stage2_ckpt)
    tr = Trainer(config, state)
    opt_g = tr._adam("clean_dec", [tr.model.clean_dec])
    opt_d = tr._adam("disc", [tr.model.disc])
    update_counts = {"generator": 0, "discriminator": 0}
    if resume is not None:
        tr.restore_run_state(state)
        if "counters/updates" in state.arrays:
            g, d = state.arrays["counters/updates"]
            update_counts = {"generator": int(g), "discriminator": int(d)}
    freeze_all_except(tr.model, STAGE_GROUPS[3])
    log = LossLog(Path(config.ckpt_dir) / "loss_log.csv")
    sampler = BatchSampler(len(corpus), config.batch_size, tr.data_rng)
    crop_len = tr._crop_len(corpus)

    for _ in range(config.steps):
        tr.step += 1
        idxs = sampler.next_indices()
        x_np, y_np = sampler.crop_aligned([corpus.clean, corpus.noisy], idxs, crop_len)
        x, y = tr._wave_batch(x_np), tr._wave_batch(y_np)
        with torch.no_grad():
            noisy_out = tr.model.encode_noisy(tr._spec(y))
            noise = torch.randn(tuple(noisy_out.posterior.shape) + (2,),
                                generator=tr.noise_gen, dtype=tr.config.torch_dtype)
            z = sample(noisy_out.posterior, noise)
        fake = tr.model.decode_clean(z, noisy_out.skips)
        clean_spec = tr._spec(x)

        d_loss = gan_discriminator_loss(
            tr.model.discriminate(fake.data.detach()),
            tr.model.discriminate(clean_spec))
        opt_d.zero_grad()
        d_loss.total.backward()
        tr._clip([tr.model.disc])
        opt_d.step()
        update_counts["discriminator"] += 1

        recon = tr._istft(fake, crop_len)
        g_loss = gan_generator_loss(tr.model.discriminate(fake.data), recon, x)
        opt_g.zero_grad()
        opt_d.zero_grad()
        g_loss.total.backward()
        tr._clip([tr.model.clean_dec])
        opt_g.step()
        update_counts["generator"] += 1

        comps = {"d_total": d_loss.item(), "d_fake": d_loss.component("fake"),
                 "d_real": d_loss.component("real"), "g_total": g_loss.item(),
                 "g_adv": g_loss.component("adv"), "g_si_snr": g_loss.component("si_snr")}
        log.write(tr.step, 3, comps)
        _check_finite(comps["d_total"] + comps["g_total"], tr.step, 3, comps,
                      Path(config.ckpt_dir))
        if config.ckpt_every and tr.step % config.ckpt_every == 0:
            save_checkpoint(tr.snapshot(3, _counter_arrays(update_counts)),
                            Path(config.ckpt_dir) / f"stage3_step{tr.step}.ckpt")

    final = tr.snapshot(3, _counter_arrays(update_counts))
    save_checkpoint(final, Path(config.ckpt_dir) / "stage3.ckpt")
    return final


def _counter_arrays(update_counts: dict) -> dict:
    return {"counters/updates": np.asarray(
        [update_counts["generator"], update_counts["discriminator"]], dtype=np.int64)}


def run_all_stages(config: TrainConfig, manifest: MixManifest | None = None) -> CheckpointState:
    manifest = manifest or MixManifest.load(config.data_manifest)
    run_stage1(config, manifest)
    run_stage2(config, manifest)
    return run_stage3(config, manifest)


# --------------------------------------------------------------------------
# inference


def build_model_from_state(state: CheckpointState,
                           dtype: torch.dtype = torch.float32) -> EnhancementModel:
    model = EnhancementModel(state.model_config, dtype=dtype)
    load_model_arrays(model, state.arrays)
    model.eval()
    set_requires_grad(model, False)
    return model


def enhance(noisy: Waveform, ckpt, mode: str = "noisy",
            clean: Waveform | None = None) -> Waveform:
    """Run the inference path: noisy encoder (or the clean encoder in oracle
    mode) into the clean decoder, using the posterior mean rather than a
    sample, then overlap-add synthesis back to the input length."""
    if mode not in ("noisy", "oracle"):
        raise ValueError(f"unknown enhancement mode: {mode!r}")
    if mode == "oracle" and clean is None:
        raise ValueError("oracle mode requires the clean reference")
    state = ckpt if isinstance(ckpt, CheckpointState) else load_checkpoint(ckpt)
    if state.stage < 2:
        raise ValueError(
            f"enhancement needs a stage-2 or stage-3 checkpoint, got stage {state.stage}")
    model = build_model_from_state(state)
    cfg = model.config
    if noisy.sample_rate != cfg.sample_rate:
        raise ValueError(f"expected {cfg.sample_rate} Hz input, got {noisy.sample_rate}")
    stft = ConvStft(cfg.stft, dtype=torch.float32)
    wave = torch.from_numpy(np.ascontiguousarray(noisy.samples)).to(torch.float32)
    with torch.no_grad():
        spec = ComplexSpectrogram(stft(wave.unsqueeze(0)), cfg.stft)
        if mode == "oracle":
            ref = torch.from_numpy(np.ascontiguousarray(clean.samples)).to(torch.float32)
            if ref.shape != wave.shape:
                raise ValueError("clean reference length must match the noisy input")
            src = model.encode_clean(ComplexSpectrogram(stft(ref.unsqueeze(0)), cfg.stft))
        else:
            src = model.encode_noisy(spec)
        recon = model.decode_clean(src.posterior.mu, src.skips)
        out = stft.inverse(recon.data, len(noisy)).squeeze(0)
    return Waveform(out.numpy().astype(np.float64), noisy.sample_rate)
