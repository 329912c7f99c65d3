"""Training objectives: scale-invariant SNR, the stage-1 VAE loss, the
latent alignment loss (KL + residual) and the least-squares adversarial pair.

Distribution terms are summed over (latent dim, frame) and averaged over the
batch; waveform terms are averaged over the batch. Each loss reports its
components so logs and tests can reconstruct the total exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .complex_gaussian import CGDParams, kl_sampled, standard_prior
from .signal_frontend import Waveform

SI_SNR_EPS = 1e-8


@dataclass
class LossBreakdown:
    total: torch.Tensor
    components: dict = field(default_factory=dict)

    def item(self) -> float:
        return float(self.total.detach())

    def component(self, name: str) -> float:
        return float(self.components[name].detach())


def _as_wave_tensor(x) -> torch.Tensor:
    if isinstance(x, Waveform):
        return torch.from_numpy(np.ascontiguousarray(x.samples))
    if torch.is_tensor(x):
        return x
    return torch.from_numpy(np.ascontiguousarray(np.asarray(x, dtype=np.float64)))


def si_snr(ref, est, zero_mean: bool = True, eps: float = SI_SNR_EPS,
           reduction: str = "mean") -> torch.Tensor:
    """Scale-invariant signal-to-noise ratio in dB (higher is better).

    The estimate is projected onto the reference; the ratio of projected
    energy to residual energy is returned in dB. The guard scales with the
    projected energy so the value is exactly invariant to positive scaling
    of the estimate and caps at exactly +80 dB for a perfect match.
    ``zero_mean`` removes DC from both signals first (the raw formula is
    exposed for hand-calculation against the projection definition).
    """
    ref_t = _as_wave_tensor(ref)
    est_t = _as_wave_tensor(est)
    if ref_t.shape != est_t.shape:
        raise ValueError(f"length mismatch: ref {tuple(ref_t.shape)} vs est {tuple(est_t.shape)}")
    if ref_t.dim() == 1:
        ref_t = ref_t.unsqueeze(0)
        est_t = est_t.unsqueeze(0)
    if zero_mean:
        ref_t = ref_t - ref_t.mean(dim=-1, keepdim=True)
        est_t = est_t - est_t.mean(dim=-1, keepdim=True)
    ref_energy = (ref_t * ref_t).sum(dim=-1, keepdim=True)
    if bool((ref_energy == 0).any()):
        raise ValueError("reference signal is all zero")
    proj = (est_t * ref_t).sum(dim=-1, keepdim=True) / ref_energy
    target = proj * ref_t
    target_energy = (target * target).sum(dim=-1)
    residual = est_t - target
    residual_energy = (residual * residual).sum(dim=-1)
    val = 10.0 * torch.log10(target_energy / (residual_energy + eps * target_energy))
    if reduction == "mean":
        return val.mean()
    if reduction == "none":
        return val
    raise ValueError(f"unknown reduction: {reduction!r}")


def stage1_loss(posterior: CGDParams, recon, target, n_samples: int = 1,
                generator: torch.Generator | None = None,
                zero_mean: bool = True) -> LossBreakdown:
    """VAE objective: sampled KL to the standard complex prior minus the
    reconstruction SI-SNR."""
    prior = standard_prior(tuple(posterior.shape), dtype=posterior.mu.dtype,
                           device=posterior.mu.device)
    batched = posterior.mu.dim() >= 3
    kl = kl_sampled(posterior, prior, n_samples=n_samples, generator=generator,
                    batched=batched)
    fidelity = si_snr(target, recon, zero_mean=zero_mean)
    total = kl - fidelity
    return LossBreakdown(total=total, components={"kl": kl, "si_snr": fidelity})


def residual_match_loss(r_x, r_yx) -> torch.Tensor:
    """Mean squared real+imag mismatch per level, summed over levels."""
    if len(r_x) != len(r_yx):
        raise ValueError(f"skip stacks differ in depth: {len(r_x)} vs {len(r_yx)}")
    total = None
    for a, b in zip(r_x, r_yx):
        if a.real.shape != b.real.shape:
            raise ValueError(
                f"skip shape mismatch: {tuple(a.real.shape)} vs {tuple(b.real.shape)}"
            )
        dr = a.real - b.real
        di = a.imag - b.imag
        level = (dr.square().sum() + di.square().sum()) / (2.0 * dr.numel())
        total = level if total is None else total + level
    return total


def latent_loss(q_y: CGDParams, p_x: CGDParams, p_d: CGDParams, r_x, r_yx,
                alpha: float = 0.25, n_samples: int = 1,
                generator: torch.Generator | None = None) -> LossBreakdown:
    """Latent alignment loss: pull the noisy-encoder posterior toward the
    clean posterior, push it from the noise posterior (weight alpha), and
    match the skip features.

    Both KL terms are sampled from the single noisy-encoder posterior; the
    noise term gets the small weight because the divergence being maximized
    has no upper bound.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    batched = q_y.mu.dim() >= 3
    kl_clean = kl_sampled(q_y, p_x, n_samples=n_samples, generator=generator, batched=batched)
    kl_noise = kl_sampled(q_y, p_d, n_samples=n_samples, generator=generator, batched=batched)
    kl = kl_clean - alpha * kl_noise
    residual = residual_match_loss(r_x, r_yx)
    total = kl + residual
    return LossBreakdown(
        total=total,
        components={"kl": kl, "kl_clean": kl_clean, "kl_noise": kl_noise,
                    "residual": residual},
    )


def gan_generator_loss(d_fake_score: torch.Tensor, recon, target,
                       zero_mean: bool = True) -> LossBreakdown:
    """Least-squares generator objective plus the reconstruction SI-SNR term."""
    adv = (d_fake_score - 1.0).square().mean()
    fidelity = si_snr(target, recon, zero_mean=zero_mean)
    total = adv - fidelity
    return LossBreakdown(total=total, components={"adv": adv, "si_snr": fidelity})


def gan_discriminator_loss(d_fake_score: torch.Tensor,
                           d_real_score: torch.Tensor) -> LossBreakdown:
    """Least-squares critic objective: fake scores to 0, real scores to 1."""
    fake = d_fake_score.square().mean()
    real = (d_real_score - 1.0).square().mean()
    total = fake + real
    return LossBreakdown(total=total, components={"fake": fake, "real": real})
