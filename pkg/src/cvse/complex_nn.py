"""Complex-valued network building blocks.

Complex weights are stored as separate real/imag arrays and every complex op
is the standard 4-real-op composition, e.g. for convolution

    out_r = conv(x_r, W_r) - conv(x_i, W_i)
    out_i = conv(x_r, W_i) + conv(x_i, W_r)

Feature maps are (real, imag) pairs of (batch, channel, freq, time) tensors.
The frequency axis is padded symmetrically so stride-2 layers halve it
exactly; the time axis is left-padded so convolutions are causal.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F


class ComplexFeatureMap(NamedTuple):
    real: torch.Tensor
    imag: torch.Tensor

    @property
    def shape(self):
        return self.real.shape

    def to_complex(self) -> torch.Tensor:
        return torch.complex(self.real, self.imag)


def from_complex(x: torch.Tensor) -> ComplexFeatureMap:
    return ComplexFeatureMap(x.real, x.imag)


def _init_complex_uniform(weight_r: torch.Tensor, weight_i: torch.Tensor, fan_in: int) -> None:
    # fan-in scaled uniform, variance split across the two parts
    bound = math.sqrt(3.0 / (2.0 * fan_in))
    with torch.no_grad():
        weight_r.uniform_(-bound, bound)
        weight_i.uniform_(-bound, bound)


def _conv_pads(kernel, stride):
    kf, kt = kernel
    pad_f = (kf - 1) // 2
    pad_t = kt - 1
    if kf - stride[0] < pad_f:
        raise ValueError(f"kernel/stride {kernel}/{stride} unsupported on the frequency axis")
    return pad_f, pad_t


class ComplexConv2d(nn.Module):
    """Strided complex conv; output frequency size is in_f // stride_f."""

    def __init__(self, in_channels, out_channels, kernel=(5, 2), stride=(2, 1), bias=True,
                 dtype=torch.float32):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = tuple(kernel)
        self.stride = tuple(stride)
        self.pad_f, self.pad_t = _conv_pads(self.kernel, self.stride)
        shape = (out_channels, in_channels, *self.kernel)
        self.weight_r = nn.Parameter(torch.empty(shape, dtype=dtype))
        self.weight_i = nn.Parameter(torch.empty(shape, dtype=dtype))
        _init_complex_uniform(self.weight_r, self.weight_i,
                              in_channels * self.kernel[0] * self.kernel[1])
        if bias:
            self.bias_r = nn.Parameter(torch.zeros(out_channels, dtype=dtype))
            self.bias_i = nn.Parameter(torch.zeros(out_channels, dtype=dtype))
        else:
            self.register_parameter("bias_r", None)
            self.register_parameter("bias_i", None)

    def forward(self, x: ComplexFeatureMap) -> ComplexFeatureMap:
        if x.real.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {x.real.shape[1]}")
        return complex_conv2d(x, self.weight_r, self.weight_i, self.bias_r, self.bias_i,
                              self.stride, self.pad_f, self.pad_t)


def complex_conv2d(x: ComplexFeatureMap, weight_r, weight_i, bias_r=None, bias_i=None,
                   stride=(2, 1), pad_f=2, pad_t=1) -> ComplexFeatureMap:
    xr = F.pad(x.real, (pad_t, 0, pad_f, pad_f))
    xi = F.pad(x.imag, (pad_t, 0, pad_f, pad_f))
    rr = F.conv2d(xr, weight_r, stride=stride)
    ii = F.conv2d(xi, weight_i, stride=stride)
    ri = F.conv2d(xr, weight_i, stride=stride)
    ir = F.conv2d(xi, weight_r, stride=stride)
    out_r, out_i = rr - ii, ri + ir
    if bias_r is not None:
        out_r = out_r + bias_r.view(1, -1, 1, 1)
        out_i = out_i + bias_i.view(1, -1, 1, 1)
    return ComplexFeatureMap(out_r, out_i)


class ComplexConvTranspose2d(nn.Module):
    """Exact transpose of ComplexConv2d's linear map (same combination rule).

    Maps an (in_f, T) feature back to (in_f * stride_f, T); weights are kept
    in (in_channels, out_channels, kf, kt) orientation.
    """

    def __init__(self, in_channels, out_channels, kernel=(5, 2), stride=(2, 1), bias=True,
                 dtype=torch.float32):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = tuple(kernel)
        self.stride = tuple(stride)
        self.pad_f, self.pad_t = _conv_pads(self.kernel, self.stride)
        shape = (in_channels, out_channels, *self.kernel)
        self.weight_r = nn.Parameter(torch.empty(shape, dtype=dtype))
        self.weight_i = nn.Parameter(torch.empty(shape, dtype=dtype))
        _init_complex_uniform(self.weight_r, self.weight_i,
                              in_channels * self.kernel[0] * self.kernel[1])
        if bias:
            self.bias_r = nn.Parameter(torch.zeros(out_channels, dtype=dtype))
            self.bias_i = nn.Parameter(torch.zeros(out_channels, dtype=dtype))
        else:
            self.register_parameter("bias_r", None)
            self.register_parameter("bias_i", None)

    def forward(self, x: ComplexFeatureMap) -> ComplexFeatureMap:
        if x.real.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {x.real.shape[1]}")
        return complex_conv_transpose2d(x, self.weight_r, self.weight_i, self.bias_r,
                                        self.bias_i, self.stride, self.pad_f, self.pad_t)


def complex_conv_transpose2d(x: ComplexFeatureMap, weight_r, weight_i, bias_r=None,
                             bias_i=None, stride=(2, 1), pad_f=2, pad_t=1) -> ComplexFeatureMap:
    rr = F.conv_transpose2d(x.real, weight_r, stride=stride)
    ii = F.conv_transpose2d(x.imag, weight_i, stride=stride)
    ri = F.conv_transpose2d(x.real, weight_i, stride=stride)
    ir = F.conv_transpose2d(x.imag, weight_r, stride=stride)
    out_r, out_i = rr - ii, ri + ir
    f_out = x.real.shape[2] * stride[0]
    t_out = x.real.shape[3]
    out_r = out_r[:, :, pad_f : pad_f + f_out, pad_t : pad_t + t_out]
    out_i = out_i[:, :, pad_f : pad_f + f_out, pad_t : pad_t + t_out]
    if bias_r is not None:
        out_r = out_r + bias_r.view(1, -1, 1, 1)
        out_i = out_i + bias_i.view(1, -1, 1, 1)
    return ComplexFeatureMap(out_r, out_i)


class ComplexBatchNorm(nn.Module):
    """Complex batch norm with full 2x2 whitening per channel.

    The (real, imag) pair is whitened by the inverse square root of its 2x2
    covariance (over batch x freq x time in train mode, running averages in
    eval mode), then passed through a learnable 2x2 affine plus complex bias.
    Running stats follow an exponential moving average with momentum 0.9.
    """

    def __init__(self, num_channels, momentum=0.9, eps=1e-5, dtype=torch.float32):
        super().__init__()
        self.num_channels = num_channels
        self.momentum = momentum
        self.eps = eps
        gamma = torch.zeros(num_channels, 2, 2, dtype=dtype)
        gamma[:, 0, 0] = 1.0
        gamma[:, 1, 1] = 1.0
        self.gamma = nn.Parameter(gamma)
        self.beta = nn.Parameter(torch.zeros(num_channels, 2, dtype=dtype))
        self.register_buffer("running_mean", torch.zeros(num_channels, 2, dtype=dtype))
        self.register_buffer("running_cov", torch.zeros(num_channels, 2, 2, dtype=dtype))
        self.register_buffer("initialized", torch.zeros(1, dtype=torch.long))

    def forward(self, x: ComplexFeatureMap) -> ComplexFeatureMap:
        if self.training:
            if x.real.shape[0] < 2:
                raise ValueError("train-mode batch norm needs batch size >= 2")
            dims = (0, 2, 3)
            mr = x.real.mean(dim=dims)
            mi = x.imag.mean(dim=dims)
            cr = x.real - mr.view(1, -1, 1, 1)
            ci = x.imag - mi.view(1, -1, 1, 1)
            vrr = (cr * cr).mean(dim=dims)
            vii = (ci * ci).mean(dim=dims)
            vri = (cr * ci).mean(dim=dims)
            with torch.no_grad():
                m = self.momentum
                batch_mean = torch.stack([mr, mi], dim=1)
                batch_cov = torch.stack(
                    [torch.stack([vrr, vri], dim=1), torch.stack([vri, vii], dim=1)], dim=1
                )
                self.running_mean.mul_(m).add_((1 - m) * batch_mean)
                self.running_cov.mul_(m).add_((1 - m) * batch_cov)
                self.initialized.fill_(1)
        else:
            if int(self.initialized) == 0:
                raise RuntimeError("eval-mode batch norm called before any training statistics")
            mr = self.running_mean[:, 0]
            mi = self.running_mean[:, 1]
            vrr = self.running_cov[:, 0, 0]
            vri = self.running_cov[:, 0, 1]
            vii = self.running_cov[:, 1, 1]
            cr = x.real - mr.view(1, -1, 1, 1)
            ci = x.imag - mi.view(1, -1, 1, 1)
        vrr = vrr + self.eps
        vii = vii + self.eps
        # closed-form inverse square root of [[vrr, vri], [vri, vii]]
        s = torch.sqrt(vrr * vii - vri * vri)
        t = torch.sqrt(vrr + vii + 2.0 * s)
        inv = 1.0 / (s * t)
        w_rr = ((vii + s) * inv).view(1, -1, 1, 1)
        w_ii = ((vrr + s) * inv).view(1, -1, 1, 1)
        w_ri = (-vri * inv).view(1, -1, 1, 1)
        xh_r = w_rr * cr + w_ri * ci
        xh_i = w_ri * cr + w_ii * ci
        g = self.gamma.view(1, -1, 2, 2, 1, 1)
        out_r = g[:, :, 0, 0] * xh_r + g[:, :, 0, 1] * xh_i + self.beta[:, 0].view(1, -1, 1, 1)
        out_i = g[:, :, 1, 0] * xh_r + g[:, :, 1, 1] * xh_i + self.beta[:, 1].view(1, -1, 1, 1)
        return ComplexFeatureMap(out_r, out_i)


class ComplexLSTM(nn.Module):
    """Two real LSTMs combined by the complex product rule; causal in time.

    out_r = LSTM_r(x_r) - LSTM_i(x_i); out_i = LSTM_r(x_i) + LSTM_i(x_r)
    on (batch, time, feature) sequences.
    """

    def __init__(self, input_size, hidden_size, dtype=torch.float32):
        super().__init__()
        self.lstm_r = nn.LSTM(input_size, hidden_size, batch_first=True)
        self.lstm_i = nn.LSTM(input_size, hidden_size, batch_first=True)
        for lstm in (self.lstm_r, self.lstm_i):
            for name, p in lstm.named_parameters():
                with torch.no_grad():
                    if name.startswith("bias"):
                        p.zero_()
                    else:
                        p.mul_(1.0 / math.sqrt(2.0))
        if dtype != torch.float32:
            self.to(dtype)

    def forward(self, x_r: torch.Tensor, x_i: torch.Tensor):
        rr, _ = self.lstm_r(x_r)
        ii, _ = self.lstm_i(x_i)
        ri, _ = self.lstm_r(x_i)
        ir, _ = self.lstm_i(x_r)
        return rr - ii, ri + ir


class ComplexLinear(nn.Module):
    def __init__(self, in_features, out_features, bias=True, dtype=torch.float32):
        super().__init__()
        self.weight_r = nn.Parameter(torch.empty(out_features, in_features, dtype=dtype))
        self.weight_i = nn.Parameter(torch.empty(out_features, in_features, dtype=dtype))
        _init_complex_uniform(self.weight_r, self.weight_i, in_features)
        if bias:
            self.bias_r = nn.Parameter(torch.zeros(out_features, dtype=dtype))
            self.bias_i = nn.Parameter(torch.zeros(out_features, dtype=dtype))
        else:
            self.register_parameter("bias_r", None)
            self.register_parameter("bias_i", None)

    def forward(self, x_r: torch.Tensor, x_i: torch.Tensor):
        rr = F.linear(x_r, self.weight_r, self.bias_r)
        ii = F.linear(x_i, self.weight_i, None)
        ri = F.linear(x_r, self.weight_i, self.bias_i)
        ir = F.linear(x_i, self.weight_r, None)
        return rr - ii, ri + ir


class ComplexPReLU(nn.Module):
    """PReLU applied to the real and imaginary parts with a shared per-channel slope."""

    def __init__(self, num_channels, init=0.25, dtype=torch.float32):
        super().__init__()
        self.slope = nn.Parameter(torch.full((num_channels,), init, dtype=dtype))

    def forward(self, x: ComplexFeatureMap) -> ComplexFeatureMap:
        return ComplexFeatureMap(F.prelu(x.real, self.slope), F.prelu(x.imag, self.slope))


def grad_check(op: Callable[[], object], params: Iterable[tuple[str, torch.Tensor]] | dict,
               probe: object = None, eps: float = 1e-5, samples_per_param: int = 16,
               generator: torch.Generator | None = None):
    """Compare backprop gradients against central finite differences.

    op() re-evaluates the network and returns a tensor or ComplexFeatureMap;
    the scalar objective is its projection onto ``probe`` (drawn once if not
    given). For each parameter up to samples_per_param elements are probed
    with a central difference of step eps. Returns the worst relative error
    max |fd - bp| / max(|fd|, |bp|, 1e-6) over all probed elements.

    Differences below the finite-difference roundoff floor (machine epsilon
    scaled by the objective magnitude over eps) are treated as zero: central
    differences cannot resolve anything finer, e.g. for parameters whose true
    gradient vanishes identically.

    Everything must run in float64 for the stated tolerances to make sense.
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = list(params)
    gen = generator if generator is not None else torch.Generator().manual_seed(0)

    first = op()
    if probe is None:
        if isinstance(first, ComplexFeatureMap):
            probe = ComplexFeatureMap(
                torch.randn(first.real.shape, generator=gen, dtype=first.real.dtype),
                torch.randn(first.imag.shape, generator=gen, dtype=first.imag.dtype),
            )
        else:
            probe = torch.randn(first.shape, generator=gen, dtype=first.dtype)

    def objective():
        out = op()
        if isinstance(out, ComplexFeatureMap):
            return (out.real * probe.real).sum() + (out.imag * probe.imag).sum()
        return (out * probe).sum()

    for _, p in named:
        if p.grad is not None:
            p.grad = None
    base = objective()
    base.backward()
    f_eps = torch.finfo(base.dtype).eps
    noise_floor = 50.0 * f_eps * max(1.0, abs(base.item())) / eps

    worst = 0.0
    for name, p in named:
        # a parameter disconnected from the objective has grad None; finite
        # differences then verify the true gradient is indeed ~0
        grad = p.grad if p.grad is not None else torch.zeros_like(p)
        flat = p.detach().view(-1)
        n = flat.numel()
        if n <= samples_per_param:
            idxs = range(n)
        else:
            idxs = torch.randperm(n, generator=gen)[:samples_per_param].tolist()
        for idx in idxs:
            orig = flat[idx].item()
            with torch.no_grad():
                flat[idx] = orig + eps
                up = objective().item()
                flat[idx] = orig - eps
                down = objective().item()
                flat[idx] = orig
            fd = (up - down) / (2.0 * eps)
            bp = grad.view(-1)[idx].item()
            diff = abs(fd - bp)
            if diff <= noise_floor:
                continue
            worst = max(worst, diff / max(abs(fd), abs(bp), 1e-6))
    return worst
