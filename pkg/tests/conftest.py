import numpy as np
import pytest
import torch

from cvse.complex_gaussian import CGDParams, make_cgd


@pytest.fixture(autouse=True)
def _single_thread_torch():
    torch.set_num_threads(max(1, torch.get_num_threads()))
    yield


def rand_valid_cgd(gen: torch.Generator, shape, dtype=torch.float64) -> CGDParams:
    """Random valid parameters via the constraining head map."""
    cdtype = torch.complex128 if dtype == torch.float64 else torch.complex64
    mu = torch.complex(
        torch.randn(shape, generator=gen, dtype=dtype),
        torch.randn(shape, generator=gen, dtype=dtype),
    ).to(cdtype)
    sigma_raw = torch.randn(shape, generator=gen, dtype=dtype)
    delta_raw = torch.complex(
        torch.randn(shape, generator=gen, dtype=dtype),
        torch.randn(shape, generator=gen, dtype=dtype),
    ).to(cdtype)
    return make_cgd(mu, sigma_raw, delta_raw)


def cgd_scalar(mu: complex, sigma: float, delta: complex, dtype=torch.float64) -> CGDParams:
    cdtype = torch.complex128 if dtype == torch.float64 else torch.complex64
    return CGDParams(
        mu=torch.full((1,), mu, dtype=cdtype),
        sigma=torch.full((1,), sigma, dtype=dtype),
        delta=torch.full((1,), delta, dtype=cdtype),
    )


@pytest.fixture
def np_rng():
    return np.random.default_rng(12345)
