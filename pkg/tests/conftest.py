import numpy as np
import pytest
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rtfilter.kernel import FilterHyperParams
from rtfilter.sde import RtSdeParams
from rtfilter.spectral import normalize


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def hp():
    return FilterHyperParams(tau_theta2=1e-2, eps=1e-6, nu=1.0, beta_s=1.0, step_r=0.1)


@pytest.fixture
def noisy_params():
    return RtSdeParams(mu_r=0.1, mu_t=0.2, sigma_r=0.1, sigma_t=0.3, eta_r=0.05, eta_t=0.1, gamma_t=0.05)


def unit_vectors(rng, n, width):
    return normalize(rng.standard_normal((n, width)))


finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False, allow_infinity=False)


@st.composite
def complex_vectors(draw, min_dim=1, max_dim=6, dim=None):
    """Interleaved complex vectors with norm bounded away from zero."""
    d = dim if dim is not None else draw(st.integers(min_value=min_dim, max_value=max_dim))
    v = draw(arrays(np.float64, (2 * d,), elements=finite))
    if np.linalg.norm(v) < 1e-3:
        v = v.copy()
        v[0] = 1.0
    return v


@st.composite
def unit_pairs(draw, min_dim=1, max_dim=6):
    """Two unit vectors of the same complex dimension."""
    d = draw(st.integers(min_value=min_dim, max_value=max_dim))
    u = normalize(draw(complex_vectors(dim=d)))
    v = normalize(draw(complex_vectors(dim=d)))
    return u, v
