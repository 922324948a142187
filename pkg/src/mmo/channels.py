"""Random channel and correlation models for the Monte-Carlo harness."""

import numpy as np

from .exceptions import InvalidInputError
from .linalg import crandn, hermitian_sqrt

__all__ = [
    "exponential_corr",
    "sample_channel",
    "sample_relay_csi",
    "sensor_source_covariance",
]


def exponential_corr(r, n):
    """Exponential correlation matrix [i, j] = r^|i-j| (PD for 0 <= r < 1)."""
    if not 0.0 <= r < 1.0:
        raise InvalidInputError("correlation magnitude must be in [0, 1)")
    idx = np.arange(n)
    return r ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def sample_channel(r_rx, r_tx, rng):
    """Spatially correlated channel H = R_rx^{1/2} G R_tx^{1/2}.

    G has i.i.d. circular complex Gaussian entries with unit variance (real
    and imaginary parts each N(0, 1/2)).
    """
    m = r_rx.shape[0]
    n = r_tx.shape[0]
    g = crandn(rng, m, n)
    return hermitian_sqrt(r_rx) @ g @ hermitian_sqrt(r_tx)


def sample_relay_csi(sigma_e2, psi_base, rng, shape=None):
    """Draw (estimated channel, true channel, design error covariance).

    The estimate is Ĥ = Ĥ_W Ψ_base^{1/2} with entry variance 1 − σ_e²; the
    error is H_W (σ_e² Ψ_base)^{1/2}, so per-entry variances split as
    σ_e² + (1 − σ_e²) = 1 and the design-time error covariance is
    σ_e² Ψ_base.
    """
    if not 0.0 <= sigma_e2 < 1.0:
        raise InvalidInputError("sigma_e2 must be in [0, 1)")
    n = psi_base.shape[0]
    m = n if shape is None else shape[0]
    root = hermitian_sqrt(psi_base)
    h_hat = np.sqrt(1.0 - sigma_e2) * crandn(rng, m, n) @ root
    h_err = np.sqrt(sigma_e2) * crandn(rng, m, n) @ root
    psi_design = sigma_e2 * psi_base
    return h_hat, h_hat + h_err, psi_design


def sensor_source_covariance(n_sensors, block_dim, rng, max_draws=200):
    """Distance-law source covariance: block (m, n) is e^{-d_mn} I with
    symmetric d_mn ~ U[0, 1].  Draws are rejected until the block-correlation
    matrix is positive definite, which i.i.d. distances do not guarantee."""
    for _ in range(max_draws):
        d = rng.uniform(0.0, 1.0, size=(n_sensors, n_sensors))
        d = np.triu(d, 1)
        d = d + d.T
        np.fill_diagonal(d, 0.0)
        corr = np.exp(-d)
        if np.linalg.eigvalsh(corr)[0] > 1e-8:
            return np.kron(corr, np.eye(block_dim))
    raise InvalidInputError("could not draw a PD sensor correlation matrix")
