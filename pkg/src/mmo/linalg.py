"""Deterministic spectral decompositions and Hermitian matrix helpers.

All solvers in this package rely on eigen/singular decompositions with
*descending* spectra and a deterministic phase/ordering convention, so that
two calls on bit-identical inputs return bit-identical factors:

* each eigenvector (and left singular vector) is rotated so its
  largest-magnitude entry is real positive;
* within a degenerate eigenvalue group (gap below ``Tolerances.tie_gap``)
  columns are ordered descending-lexicographically on their canonical-phase
  representation, which keeps e.g. ``sorted_evd(I) == I``.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError, NotPsdError
from .tolerances import DEFAULT, Tolerances

__all__ = [
    "HermitianSorted",
    "SingularTriple",
    "sorted_evd",
    "sorted_svd",
    "hermitian_sqrt",
    "inv_sqrt_psd",
    "random_unitary",
    "random_hermitian",
    "random_psd",
    "crandn",
]


@dataclass(frozen=True)
class HermitianSorted:
    """EVD of a Hermitian matrix with eigenvalues sorted descending."""

    matrix: np.ndarray
    eigvecs: np.ndarray
    eigvals: np.ndarray


@dataclass(frozen=True)
class SingularTriple:
    """Full SVD ``left @ diag(singvals) @ right.conj().T`` (descending)."""

    left: np.ndarray
    singvals: np.ndarray
    right: np.ndarray

    def reconstruct(self):
        m, n = self.left.shape[0], self.right.shape[0]
        sigma = np.zeros((m, n))
        k = self.singvals.size
        sigma[:k, :k] = np.diag(self.singvals)
        return self.left @ sigma @ self.right.conj().T


def _require_finite(a, name):
    if not np.all(np.isfinite(a.real)) or not np.all(np.isfinite(a.imag)):
        raise InvalidInputError(f"{name} contains non-finite entries")


def _canonical_phase(vectors):
    """Rotate each column so its largest-magnitude entry is real positive."""
    v = vectors.copy()
    idx = np.argmax(np.abs(v), axis=0)
    pivots = v[idx, np.arange(v.shape[1])]
    mags = np.abs(pivots)
    safe = mags > 1e-300
    phases = np.ones_like(pivots)
    phases[safe] = pivots[safe] / mags[safe]
    return v * phases.conj()[None, :]


def _lex_order_desc(columns):
    """Indices sorting columns descending-lexicographically on (re, im)."""
    n, m = columns.shape
    keys = np.empty((2 * n, m))
    keys[0::2] = np.round(columns.real, 10)
    keys[1::2] = np.round(columns.imag, 10)
    # np.lexsort uses the LAST row as the primary key and sorts ascending.
    order = np.lexsort(-keys[::-1])
    return order


def _break_ties(values, vectors, gap):
    """Reorder degenerate-eigenvalue columns deterministically."""
    n = values.size
    scale = max(1.0, float(np.max(np.abs(values))) if n else 1.0)
    out_vals = values.copy()
    out_vecs = vectors.copy()
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and abs(values[stop - 1] - values[stop]) < gap * scale:
            stop += 1
        if stop - start > 1:
            block = out_vecs[:, start:stop]
            order = _lex_order_desc(block)
            out_vecs[:, start:stop] = block[:, order]
            out_vals[start:stop] = out_vals[start:stop][order]
        start = stop
    return out_vals, out_vecs


def sorted_evd(a, tol: Tolerances = DEFAULT) -> HermitianSorted:
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending.

    The input may deviate from exact Hermitian symmetry by up to
    ``tol.hermitian`` (relative); it is symmetrized before factoring.
    """
    a = np.asarray(a, dtype=complex)
    _require_finite(a, "matrix")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.linalg.norm(a)))
    if np.linalg.norm(a - a.conj().T) > tol.hermitian * scale * 10:
        raise InvalidInputError("matrix is not Hermitian within tolerance")
    a = 0.5 * (a + a.conj().T)
    w, v = np.linalg.eigh(a)
    w = w[::-1].copy()
    v = v[:, ::-1]
    v = _canonical_phase(v)
    w, v = _break_ties(w, v, tol.tie_gap)
    return HermitianSorted(matrix=a, eigvecs=v, eigvals=w)


def sorted_svd(a, tol: Tolerances = DEFAULT) -> SingularTriple:
    """Full SVD with descending singular values and canonical phases."""
    a = np.asarray(a, dtype=complex)
    _require_finite(a, "matrix")
    if a.ndim != 2:
        raise InvalidInputError(f"expected a matrix, got shape {a.shape}")
    u, s, vh = np.linalg.svd(a, full_matrices=True)
    v = vh.conj().T
    k = s.size
    # phase convention comes from the left factor; the right factor follows so
    # that u @ diag(s) @ v^H is unchanged
    idx = np.argmax(np.abs(u[:, :k]), axis=0)
    pivots = u[idx, np.arange(k)]
    mags = np.abs(pivots)
    safe = mags > 1e-300
    phases = np.ones_like(pivots)
    phases[safe] = pivots[safe] / mags[safe]
    u[:, :k] = u[:, :k] * phases.conj()[None, :]
    v[:, :k] = v[:, :k] * phases.conj()[None, :]
    if u.shape[1] > k:
        u[:, k:] = _canonical_phase(u[:, k:])
    if v.shape[1] > k:
        v[:, k:] = _canonical_phase(v[:, k:])
    # deterministic order inside groups of (near-)equal singular values
    scale = max(1.0, float(s[0]) if k else 1.0)
    start = 0
    while start < k:
        stop = start + 1
        while stop < k and abs(s[stop - 1] - s[stop]) < tol.tie_gap * scale:
            stop += 1
        if stop - start > 1:
            order = _lex_order_desc(u[:, start:stop])
            u[:, start:stop] = u[:, start:stop][:, order]
            v[:, start:stop] = v[:, start:stop][:, order]
            s[start:stop] = s[start:stop][order]
        start = stop
    return SingularTriple(left=u, singvals=s, right=v)


def hermitian_sqrt(a, tol: Tolerances = DEFAULT) -> np.ndarray:
    """The unique Hermitian PSD square root of a PSD matrix.

    Eigenvalues in ``[-tol.psd_clip, 0)`` are clamped to zero; anything below
    ``-tol.psd * ||a||`` raises :class:`NotPsdError`.
    """
    dec = sorted_evd(a, tol)
    scale = max(float(dec.eigvals[0]), 0.0) if dec.eigvals.size else 0.0
    floor = -tol.psd * max(scale, 1e-300)
    if np.any(dec.eigvals < min(floor, -tol.psd_clip)):
        raise NotPsdError(
            f"matrix has eigenvalue {dec.eigvals.min():.3e}, not PSD"
        )
    w = np.clip(dec.eigvals, 0.0, None)
    root = (dec.eigvecs * np.sqrt(w)[None, :]) @ dec.eigvecs.conj().T
    return 0.5 * (root + root.conj().T)


def inv_sqrt_psd(a, tol: Tolerances = DEFAULT, regularize: bool = False) -> np.ndarray:
    """Hermitian inverse square root ``a^{-1/2}`` of a PD matrix.

    With ``regularize=True`` a near-singular input (condition number above
    ``tol.cond_limit``) is shifted by ``tol.reg_scale * trace/n * I`` before
    inversion, which is needed while subgradient iterations pass through
    rank-deficient weight combinations.
    """
    a = np.asarray(a, dtype=complex)
    dec = sorted_evd(a, tol)
    if regularize:
        wmax = float(dec.eigvals[0])
        wmin = float(dec.eigvals[-1])
        if wmin <= 0 or wmax / max(wmin, 1e-300) > tol.cond_limit:
            shift = tol.reg_scale * max(np.trace(a).real / a.shape[0], 1e-300)
            dec = sorted_evd(a + shift * np.eye(a.shape[0]), tol)
    if dec.eigvals[-1] <= 0:
        raise NotPsdError("matrix is not positive definite")
    w = 1.0 / np.sqrt(dec.eigvals)
    out = (dec.eigvecs * w[None, :]) @ dec.eigvecs.conj().T
    return 0.5 * (out + out.conj().T)


def crandn(rng, *shape):
    """Circular complex Gaussian entries with unit variance per entry."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_unitary(rng, n):
    q, r = np.linalg.qr(crandn(rng, n, n))
    return q * (np.diag(r) / np.abs(np.diag(r)))[None, :]


def random_hermitian(rng, n, scale=1.0):
    a = crandn(rng, n, n)
    return scale * 0.5 * (a + a.conj().T)


def random_psd(rng, n, scale=1.0):
    a = crandn(rng, n, n)
    return scale * (a @ a.conj().T) / n
