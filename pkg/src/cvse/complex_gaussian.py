"""Diagonal complex Gaussian distributions with pseudo-covariance.

Each latent element carries a mean mu (complex), covariance sigma (real,
positive) and pseudo-covariance delta (complex, |delta| <= sigma). All math
runs per element on the equivalent real 2-vector (Re z, Im z), whose
covariance is

    C = 0.5 * [[sigma + Re delta, Im delta],
               [Im delta,         sigma - Re delta]].

Sampling uses the lower-triangular Cholesky factor of C applied to external
standard-normal noise, so gradients flow to (mu, sigma, delta) and the draw
is deterministic given the noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

SIGMA_FLOOR = 1e-6
DET_FLOOR = 1e-9
CHOL_EPS = 1e-12


@dataclass
class CGDParams:
    """Per-element parameters; tensors share one shape (e.g. (L, T) or (B, L, T))."""

    mu: torch.Tensor
    sigma: torch.Tensor
    delta: torch.Tensor

    def __post_init__(self):
        if not torch.is_complex(self.mu) or not torch.is_complex(self.delta):
            raise ValueError("mu and delta must be complex tensors")
        if torch.is_complex(self.sigma):
            raise ValueError("sigma must be real")
        if not (self.mu.shape == self.sigma.shape == self.delta.shape):
            raise ValueError("mu, sigma, delta must share a shape")

    @property
    def shape(self):
        return self.mu.shape

    def validate(self, tol: float = 1e-6) -> None:
        if not bool(torch.isfinite(self.sigma).all() and torch.isfinite(self.mu.real).all()
                    and torch.isfinite(self.mu.imag).all() and torch.isfinite(self.delta.real).all()
                    and torch.isfinite(self.delta.imag).all()):
            raise ValueError("non-finite distribution parameters")
        if bool((self.sigma <= 0).any()):
            raise ValueError("sigma must be positive everywhere")
        excess = (self.delta.abs() - self.sigma * (1.0 + tol)).max()
        if bool(excess > 0):
            raise ValueError(f"|delta| exceeds sigma by up to {float(excess):.3g}")

    def detach(self) -> "CGDParams":
        return CGDParams(self.mu.detach(), self.sigma.detach(), self.delta.detach())


@dataclass
class LatentSample:
    """Complex latent draw with the same element layout as its CGDParams."""

    z: torch.Tensor

    def __post_init__(self):
        if not torch.is_complex(self.z):
            raise ValueError("latent sample must be complex")


def make_cgd(mu_raw: torch.Tensor, sigma_raw: torch.Tensor, delta_raw: torch.Tensor) -> CGDParams:
    """Map unconstrained head outputs onto valid parameters.

    sigma = softplus(sigma_raw) + 1e-6 and delta = sigma * tanh(|delta_raw|)
    in the direction of delta_raw, so sigma > 0 and |delta| < sigma hold by
    construction for any finite input.
    """
    if delta_raw.real.dtype != sigma_raw.dtype or mu_raw.real.dtype != sigma_raw.dtype:
        raise ValueError("mu_raw, sigma_raw, delta_raw must share a real dtype")
    sigma = F_softplus(sigma_raw) + SIGMA_FLOOR
    mag = delta_raw.abs()
    unit = delta_raw / torch.clamp(mag, min=torch.finfo(mag.dtype).tiny)
    # tanh saturates to 1.0 exactly in float arithmetic; keep the gate strict
    gate = torch.tanh(mag).clamp(max=1.0 - 1e-7)
    delta = (sigma * gate).to(unit.dtype) * unit
    return CGDParams(mu=mu_raw, sigma=sigma, delta=delta)


def F_softplus(x: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.softplus(x)


def standard_prior(shape, dtype: torch.dtype = torch.complex64, device=None) -> CGDParams:
    """CN(0, 1, 0) at every element."""
    if isinstance(shape, int):
        shape = (shape,)
    real_dtype = torch.float32 if dtype == torch.complex64 else torch.float64
    return CGDParams(
        mu=torch.zeros(shape, dtype=dtype, device=device),
        sigma=torch.ones(shape, dtype=real_dtype, device=device),
        delta=torch.zeros(shape, dtype=dtype, device=device),
    )


def _chol_terms(params: CGDParams):
    """Entries of the lower Cholesky factor of C, eps-regularized."""
    a2 = torch.clamp((params.sigma + params.delta.real) * 0.5, min=CHOL_EPS)
    a = torch.sqrt(a2)
    b = params.delta.imag * 0.5 / a
    c2 = torch.clamp((params.sigma - params.delta.real) * 0.5 - b * b, min=0.0)
    return a, b, torch.sqrt(c2)


def sample(params: CGDParams, noise: torch.Tensor) -> LatentSample:
    """Reparameterized draw from externally supplied N(0, I2) noise.

    noise has shape params.shape + (2,); z = mu + L @ noise per element with
    C = L L^T.
    """
    params.validate()
    if noise.shape != params.shape + (2,):
        raise ValueError(f"noise shape {tuple(noise.shape)} != {tuple(params.shape)} + (2,)")
    a, b, c = _chol_terms(params)
    n1, n2 = noise[..., 0], noise[..., 1]
    zr = params.mu.real + a * n1
    zi = params.mu.imag + b * n1 + c * n2
    return LatentSample(z=torch.complex(zr, zi))


def log_density(params: CGDParams, z, reduce: str = "none") -> torch.Tensor:
    """Per-element log density of the equivalent bivariate real normal.

    Requires |delta| < sigma strictly: elements whose det C falls below the
    1e-9 floor are degenerate and raise.
    """
    zt = z.z if isinstance(z, LatentSample) else z
    dr = zt.real - params.mu.real
    di = zt.imag - params.mu.imag
    a = (params.sigma + params.delta.real) * 0.5
    b = params.delta.imag * 0.5
    c = (params.sigma - params.delta.real) * 0.5
    det = a * c - b * b
    if bool((det < DET_FLOOR).any()):
        raise ValueError(
            f"degenerate complex Gaussian: min det C = {float(det.min()):.3g} < {DET_FLOOR}"
        )
    quad = (c * dr * dr - 2.0 * b * dr * di + a * di * di) / det
    ld = -math.log(2.0 * math.pi) - 0.5 * torch.log(det) - 0.5 * quad
    if reduce == "sum":
        return ld.sum()
    if reduce != "none":
        raise ValueError(f"unknown reduce: {reduce!r}")
    return ld


def kl_sampled(p: CGDParams, q: CGDParams, n_samples: int = 1,
               generator: torch.Generator | None = None,
               batched: bool = False, return_stderr: bool = False):
    """Monte Carlo KL(p || q): mean over draws of log p(z) - log q(z), z ~ p.

    Element contributions are summed; with batched=True the leading axis is
    treated as a batch and averaged instead. Unbiased for any n_samples >= 1.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    p.validate()
    q.validate()
    real_dtype = p.sigma.dtype
    noise = torch.randn(
        (n_samples,) + tuple(p.shape) + (2,), dtype=real_dtype, generator=generator,
        device=p.sigma.device,
    )
    pe = _expand(p, n_samples)
    qe = _expand(q, n_samples)
    z = sample(pe, noise)
    diff = log_density(pe, z) - log_density(qe, z)
    sum_dims = tuple(range(2, diff.dim())) if batched else tuple(range(1, diff.dim()))
    per_draw = diff.sum(dim=sum_dims) if sum_dims else diff
    if batched:
        per_draw = per_draw.mean(dim=1)
    est = per_draw.mean(dim=0)
    if not return_stderr:
        return est
    if n_samples == 1:
        stderr = torch.full_like(est.detach(), float("inf"))
    else:
        stderr = per_draw.detach().std(dim=0) / math.sqrt(n_samples)
    return est, stderr


def _expand(params: CGDParams, n: int) -> CGDParams:
    return CGDParams(
        mu=params.mu.unsqueeze(0).expand((n,) + tuple(params.shape)),
        sigma=params.sigma.unsqueeze(0).expand((n,) + tuple(params.shape)),
        delta=params.delta.unsqueeze(0).expand((n,) + tuple(params.shape)),
    )


def kl_analytic(p: CGDParams, q: CGDParams, batched: bool = False) -> torch.Tensor:
    """Exact KL through the real 2-d embedding, summed over elements.

    KL = 0.5 [tr(Cq^-1 Cp) + dm^T Cq^-1 dm - 2 + ln(det Cq / det Cp)]
    """
    p.validate()
    q.validate()
    ap = (p.sigma + p.delta.real) * 0.5
    bp = p.delta.imag * 0.5
    cp = (p.sigma - p.delta.real) * 0.5
    aq = (q.sigma + q.delta.real) * 0.5
    bq = q.delta.imag * 0.5
    cq = (q.sigma - q.delta.real) * 0.5
    det_p = ap * cp - bp * bp
    det_q = aq * cq - bq * bq
    if bool((det_q < DET_FLOOR).any()):
        raise ValueError("q is singular (det C below floor)")
    det_p = torch.clamp(det_p, min=torch.finfo(det_p.dtype).tiny)
    # Cq^-1 = [[cq, -bq], [-bq, aq]] / det_q
    trace = (cq * ap - 2.0 * bq * bp + aq * cp) / det_q
    dr = p.mu.real - q.mu.real
    di = p.mu.imag - q.mu.imag
    quad = (cq * dr * dr - 2.0 * bq * dr * di + aq * di * di) / det_q
    kl = 0.5 * (trace + quad - 2.0 + torch.log(det_q / det_p))
    if batched:
        return kl.sum(dim=tuple(range(1, kl.dim()))).mean(dim=0) if kl.dim() > 1 else kl
    return kl.sum()
