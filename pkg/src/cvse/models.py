"""Model assembly: clean/noise VAEs, the noisy-speech encoder, a decoder
generation path with skip connections, and the adversarial critic.

All encoders share one architecture (disjoint parameters): a stack of
complex conv blocks halving the frequency axis per level, a complex LSTM
over the flattened bottleneck, and three complex linear heads emitting the
latent complex-Gaussian parameters per frame. Decoders mirror the stack
with transposed convolutions, consuming the per-level encoder features by
channel concatenation and synthesizing the full complex spectrum directly
(no masking).

The DC bin is dropped in front of the encoder so the frequency axis is a
power of two, and reinserted as zeros at synthesis.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .complex_gaussian import CGDParams, LatentSample, make_cgd
from .complex_nn import (
    ComplexBatchNorm,
    ComplexConv2d,
    ComplexConvTranspose2d,
    ComplexFeatureMap,
    ComplexLinear,
    ComplexLSTM,
    ComplexPReLU,
    grad_check,
)
from .signal_frontend import ComplexSpectrogram, StftConfig, desk_stft_config, paper_stft_config


@dataclass(frozen=True)
class ModelConfig:
    profile: str
    sample_rate: int
    stft: StftConfig
    channels: tuple
    lstm_units: int
    latent_dim: int
    kernel: tuple = (5, 2)
    stride: tuple = (2, 1)

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.freq_in % (self.stride[0] ** self.n_levels) != 0:
            raise ValueError(
                f"frequency axis {self.freq_in} not divisible by "
                f"{self.stride[0]}^{self.n_levels} levels"
            )

    @property
    def n_levels(self) -> int:
        return len(self.channels)

    @property
    def freq_in(self) -> int:
        # DC bin dropped: fft/2 + 1 - 1
        return self.stft.fft_size // 2

    @property
    def bottleneck_freq(self) -> int:
        return self.freq_in // (self.stride[0] ** self.n_levels)

    @property
    def bottleneck_features(self) -> int:
        return self.channels[-1] * self.bottleneck_freq

    @classmethod
    def paper(cls) -> "ModelConfig":
        return cls(
            profile="paper",
            sample_rate=16000,
            stft=paper_stft_config(),
            channels=(32, 64, 128, 128, 256, 256),
            lstm_units=128,
            latent_dim=128,
        )

    @classmethod
    def desk(cls) -> "ModelConfig":
        return cls(
            profile="desk",
            sample_rate=16000,
            stft=desk_stft_config(),
            channels=(4, 8, 8, 16, 16, 32),
            lstm_units=32,
            latent_dim=16,
        )

    @classmethod
    def from_profile(cls, name: str) -> "ModelConfig":
        if name == "paper":
            return cls.paper()
        if name == "desk":
            return cls.desk()
        raise ValueError(f"unknown profile: {name!r}")


@dataclass
class EncoderOutput:
    """Latent posterior plus the per-level features feeding the decoder skips."""

    posterior: CGDParams
    skips: list = field(default_factory=list)


def spec_to_features(data: torch.Tensor) -> ComplexFeatureMap:
    """(B, F, T) complex -> (B, 1, F-1, T) real/imag pair, DC row dropped."""
    x = data[:, 1:, :].unsqueeze(1)
    return ComplexFeatureMap(x.real, x.imag)


def features_to_spec(x: ComplexFeatureMap) -> torch.Tensor:
    """(B, 1, F-1, T) pair -> (B, F, T) complex with a zero DC row."""
    real = x.real.squeeze(1)
    imag = x.imag.squeeze(1)
    dc = torch.zeros_like(real[:, :1, :])
    return torch.complex(torch.cat([dc, real], dim=1), torch.cat([dc, imag], dim=1))


class EncoderBlock(nn.Module):
    def __init__(self, in_ch, out_ch, kernel, stride, dtype):
        super().__init__()
        self.conv = ComplexConv2d(in_ch, out_ch, kernel, stride, dtype=dtype)
        self.bn = ComplexBatchNorm(out_ch, dtype=dtype)
        self.act = ComplexPReLU(out_ch, dtype=dtype)

    def forward(self, x: ComplexFeatureMap) -> ComplexFeatureMap:
        return self.act(self.bn(self.conv(x)))


class DecoderBlock(nn.Module):
    def __init__(self, in_ch, out_ch, kernel, stride, dtype, final=False):
        super().__init__()
        self.tconv = ComplexConvTranspose2d(in_ch, out_ch, kernel, stride, dtype=dtype)
        self.bn = None if final else ComplexBatchNorm(out_ch, dtype=dtype)
        self.act = None if final else ComplexPReLU(out_ch, dtype=dtype)

    def forward(self, x: ComplexFeatureMap) -> ComplexFeatureMap:
        x = self.tconv(x)
        if self.bn is not None:
            x = self.act(self.bn(x))
        return x


class ConvEncoderStack(nn.Module):
    """Shared trunk: conv blocks plus the complex LSTM over the bottleneck."""

    def __init__(self, config: ModelConfig, dtype):
        super().__init__()
        chans = (1,) + tuple(config.channels)
        self.blocks = nn.ModuleList(
            EncoderBlock(chans[i], chans[i + 1], config.kernel, config.stride, dtype)
            for i in range(config.n_levels)
        )

    def forward(self, x: ComplexFeatureMap):
        skips = []
        for block in self.blocks:
            x = block(x)
            skips.append(x)
        return x, skips


class VaeEncoder(nn.Module):
    def __init__(self, config: ModelConfig, dtype=torch.float32):
        super().__init__()
        self.config = config
        self.stack = ConvEncoderStack(config, dtype)
        self.clstm = ComplexLSTM(config.bottleneck_features, config.lstm_units, dtype=dtype)
        self.mu_head = ComplexLinear(config.lstm_units, config.latent_dim, dtype=dtype)
        self.sigma_head = ComplexLinear(config.lstm_units, config.latent_dim, dtype=dtype)
        self.delta_head = ComplexLinear(config.lstm_units, config.latent_dim, dtype=dtype)

    def forward(self, data: torch.Tensor) -> EncoderOutput:
        bottom, skips = self.stack(spec_to_features(data))
        b, c, fq, t = bottom.real.shape
        hr = bottom.real.permute(0, 3, 1, 2).reshape(b, t, c * fq)
        hi = bottom.imag.permute(0, 3, 1, 2).reshape(b, t, c * fq)
        hr, hi = self.clstm(hr, hi)
        mu_r, mu_i = self.mu_head(hr, hi)
        sig_r, _ = self.sigma_head(hr, hi)
        del_r, del_i = self.delta_head(hr, hi)
        posterior = make_cgd(
            torch.complex(mu_r, mu_i).transpose(1, 2),
            sig_r.transpose(1, 2),
            torch.complex(del_r, del_i).transpose(1, 2),
        )
        return EncoderOutput(posterior=posterior, skips=skips)


class VaeDecoder(nn.Module):
    def __init__(self, config: ModelConfig, dtype=torch.float32):
        super().__init__()
        self.config = config
        self.proj = ComplexLinear(config.latent_dim, config.bottleneck_features, dtype=dtype)
        out_chans = tuple(reversed(config.channels[:-1])) + (1,)
        skip_chans = tuple(reversed(config.channels))
        in_ch = config.channels[-1]
        blocks = []
        for i in range(config.n_levels):
            blocks.append(
                DecoderBlock(in_ch + skip_chans[i], out_chans[i], config.kernel,
                             config.stride, dtype, final=(i == config.n_levels - 1))
            )
            in_ch = out_chans[i]
        self.blocks = nn.ModuleList(blocks)

    def forward(self, z: torch.Tensor, skips: list) -> torch.Tensor:
        if len(skips) != len(self.blocks):
            raise ValueError(f"expected {len(self.blocks)} skip levels, got {len(skips)}")
        zr = z.real.transpose(1, 2)
        zi = z.imag.transpose(1, 2)
        hr, hi = self.proj(zr, zi)
        b, t, _ = hr.shape
        c, fq = self.config.channels[-1], self.config.bottleneck_freq
        x = ComplexFeatureMap(
            hr.reshape(b, t, c, fq).permute(0, 2, 3, 1),
            hi.reshape(b, t, c, fq).permute(0, 2, 3, 1),
        )
        for i, block in enumerate(self.blocks):
            skip = skips[len(skips) - 1 - i]
            x = ComplexFeatureMap(
                torch.cat([x.real, skip.real], dim=1),
                torch.cat([x.imag, skip.imag], dim=1),
            )
            x = block(x)
        return features_to_spec(x)


class Discriminator(nn.Module):
    """Encoder-style stack with a single-unit real LSTM head; raw scores."""

    def __init__(self, config: ModelConfig, dtype=torch.float32):
        super().__init__()
        self.config = config
        self.stack = ConvEncoderStack(config, dtype)
        self.rnn = nn.LSTM(2 * config.bottleneck_features, 1, batch_first=True)
        if dtype != torch.float32:
            self.rnn.to(dtype)

    def forward(self, data: torch.Tensor) -> torch.Tensor:
        bottom, _ = self.stack(spec_to_features(data))
        b, c, fq, t = bottom.real.shape
        hr = bottom.real.permute(0, 3, 1, 2).reshape(b, t, c * fq)
        hi = bottom.imag.permute(0, 3, 1, 2).reshape(b, t, c * fq)
        h, _ = self.rnn(torch.cat([hr, hi], dim=-1))
        return h.squeeze(-1).mean(dim=1)


class EnhancementModel(nn.Module):
    """The full system: C-VAE, N-VAE, noisy encoder and adversarial critic."""

    def __init__(self, config: ModelConfig, dtype=torch.float32):
        super().__init__()
        self.config = config
        self.clean_enc = VaeEncoder(config, dtype)
        self.clean_dec = VaeDecoder(config, dtype)
        self.noise_enc = VaeEncoder(config, dtype)
        self.noise_dec = VaeDecoder(config, dtype)
        self.noisy_enc = VaeEncoder(config, dtype)
        self.disc = Discriminator(config, dtype)

    # -- spec plumbing -----------------------------------------------------
    def _unwrap(self, spec) -> torch.Tensor:
        if isinstance(spec, ComplexSpectrogram):
            if spec.config != self.config.stft:
                raise ValueError(
                    f"profile mismatch: spectrogram {spec.config} vs model {self.config.stft}"
                )
            data = spec.data
        else:
            data = spec
        if data.dim() == 2:
            data = data.unsqueeze(0)
        if data.shape[-2] != self.config.stft.n_bins:
            raise ValueError(
                f"expected {self.config.stft.n_bins} bins, got {data.shape[-2]}"
            )
        return data

    def _wrap(self, data: torch.Tensor) -> ComplexSpectrogram:
        return ComplexSpectrogram(data=data, config=self.config.stft)

    # -- public operations ---------------------------------------------------
    def encode_clean(self, spec) -> EncoderOutput:
        return self.clean_enc(self._unwrap(spec))

    def encode_noise(self, spec) -> EncoderOutput:
        return self.noise_enc(self._unwrap(spec))

    def encode_noisy(self, spec) -> EncoderOutput:
        return self.noisy_enc(self._unwrap(spec))

    def decode_clean(self, z, skips) -> ComplexSpectrogram:
        zt = z.z if isinstance(z, LatentSample) else z
        return self._wrap(self.clean_dec(zt, skips))

    def decode_noise(self, z, skips) -> ComplexSpectrogram:
        zt = z.z if isinstance(z, LatentSample) else z
        return self._wrap(self.noise_dec(zt, skips))

    def discriminate(self, spec) -> torch.Tensor:
        return self.disc(self._unwrap(spec))


STAGE_GROUPS = {
    1: ("clean_enc", "clean_dec", "noise_enc", "noise_dec"),
    2: ("noisy_enc",),
    3: ("clean_dec", "disc"),
}


def set_requires_grad(module: nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def freeze_all_except(model: EnhancementModel, trainable: tuple) -> None:
    """Disable gradients everywhere, then re-enable (and set train mode) on
    the named submodules; frozen submodules run in eval mode so batch-norm
    statistics stay untouched."""
    model.eval()
    set_requires_grad(model, False)
    for name in trainable:
        sub = getattr(model, name)
        sub.train()
        set_requires_grad(sub, True)


def hash_module_state(module: nn.Module) -> str:
    """Digest over parameters and buffers; detects any mutation."""
    h = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        h.update(name.encode())
        h.update(state[name].detach().cpu().numpy().tobytes())
    return h.hexdigest()


def gradcheck_suite(config: ModelConfig | None = None, samples_per_param: int = 4,
                    eps: float = 1e-5, n_frames: int = 8, seed: int = 0) -> dict:
    """Finite-difference checks for every layer kind plus the full encoder,
    decoder and discriminator at the given profile, in float64.

    Returns {check name: worst relative error}.
    """
    config = config or ModelConfig.desk()
    dtype = torch.float64
    gen = torch.Generator().manual_seed(seed)
    results = {}

    def fmap(shape):
        return ComplexFeatureMap(
            torch.randn(shape, generator=gen, dtype=dtype),
            torch.randn(shape, generator=gen, dtype=dtype),
        )

    conv = ComplexConv2d(2, 3, config.kernel, config.stride, dtype=dtype)
    x = fmap((2, 2, 16, n_frames))
    results["complex_conv2d"] = grad_check(
        lambda: conv(x), dict(conv.named_parameters()), eps=eps,
        samples_per_param=samples_per_param, generator=torch.Generator().manual_seed(seed))

    tconv = ComplexConvTranspose2d(3, 2, config.kernel, config.stride, dtype=dtype)
    xt = fmap((2, 3, 8, n_frames))
    results["complex_conv_transpose2d"] = grad_check(
        lambda: tconv(xt), dict(tconv.named_parameters()), eps=eps,
        samples_per_param=samples_per_param, generator=torch.Generator().manual_seed(seed))

    bn = ComplexBatchNorm(3, dtype=dtype).train()
    xb = fmap((2, 3, 8, n_frames))
    results["complex_batch_norm"] = grad_check(
        lambda: bn(xb), dict(bn.named_parameters()), eps=eps,
        samples_per_param=samples_per_param, generator=torch.Generator().manual_seed(seed))

    lstm = ComplexLSTM(6, 4, dtype=dtype)
    xr = torch.randn(2, n_frames, 6, generator=gen, dtype=dtype)
    xi = torch.randn(2, n_frames, 6, generator=gen, dtype=dtype)
    results["complex_lstm"] = grad_check(
        lambda: ComplexFeatureMap(*lstm(xr, xi)), dict(lstm.named_parameters()), eps=eps,
        samples_per_param=samples_per_param, generator=torch.Generator().manual_seed(seed))

    lin = ComplexLinear(5, 3, dtype=dtype)
    lr = torch.randn(4, 5, generator=gen, dtype=dtype)
    li = torch.randn(4, 5, generator=gen, dtype=dtype)
    results["complex_linear"] = grad_check(
        lambda: ComplexFeatureMap(*lin(lr, li)), dict(lin.named_parameters()), eps=eps,
        samples_per_param=samples_per_param, generator=torch.Generator().manual_seed(seed))

    act = ComplexPReLU(3, dtype=dtype)
    xa = fmap((1, 3, 4, n_frames))
    xa = ComplexFeatureMap(xa.real + 0.2 * xa.real.sign(), xa.imag + 0.2 * xa.imag.sign())
    results["complex_prelu"] = grad_check(
        lambda: act(xa), dict(act.named_parameters()), eps=eps,
        samples_per_param=samples_per_param, generator=torch.Generator().manual_seed(seed))

    model = EnhancementModel(config, dtype=dtype).train()
    n_bins = config.stft.n_bins
    spec = torch.complex(
        torch.randn(2, n_bins, n_frames, generator=gen, dtype=dtype),
        torch.randn(2, n_bins, n_frames, generator=gen, dtype=dtype),
    )

    def enc_op():
        out = model.encode_clean(spec)
        return ComplexFeatureMap(out.posterior.mu.real + out.posterior.sigma,
                                 out.posterior.mu.imag + out.posterior.delta.imag)

    results["encoder"] = grad_check(
        enc_op, dict(model.clean_enc.named_parameters()), eps=eps,
        samples_per_param=samples_per_param, generator=torch.Generator().manual_seed(seed))

    enc_out = model.encode_clean(spec)
    z0 = enc_out.posterior.mu.detach()
    skips0 = [ComplexFeatureMap(s.real.detach(), s.imag.detach()) for s in enc_out.skips]

    def dec_op():
        out = model.decode_clean(z0, skips0)
        return ComplexFeatureMap(out.data.real, out.data.imag)

    results["decoder"] = grad_check(
        dec_op, dict(model.clean_dec.named_parameters()), eps=eps,
        samples_per_param=samples_per_param, generator=torch.Generator().manual_seed(seed))

    results["discriminator"] = grad_check(
        lambda: model.discriminate(spec), dict(model.disc.named_parameters()), eps=eps,
        samples_per_param=samples_per_param, generator=torch.Generator().manual_seed(seed))

    return results
