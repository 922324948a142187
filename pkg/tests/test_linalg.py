import numpy as np
import pytest

from mmo.exceptions import InvalidInputError, NotPsdError
from mmo.linalg import (crandn, hermitian_sqrt, inv_sqrt_psd, random_hermitian,
                        random_psd, random_unitary, sorted_evd, sorted_svd)


def test_evd_diagonal_input():
    dec = sorted_evd(np.diag([1.0, 3.0, 2.0]))
    assert np.allclose(dec.eigvals, [3.0, 2.0, 1.0])
    # eigenvectors are a column permutation of the identity
    perm = np.abs(dec.eigvecs)
    assert np.allclose(perm @ perm.T, np.eye(3), atol=1e-12)
    assert np.allclose(np.sort(perm.ravel()), np.sort(np.eye(3).ravel()))


def test_evd_identity_tie_break():
    dec = sorted_evd(np.eye(3))
    assert np.allclose(dec.eigvals, [1.0, 1.0, 1.0])
    assert np.allclose(dec.eigvecs, np.eye(3))


def test_evd_reconstruction_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = random_hermitian(rng, 5)
        dec = sorted_evd(a)
        rec = (dec.eigvecs * dec.eigvals[None, :]) @ dec.eigvecs.conj().T
        assert np.linalg.norm(rec - a) < 1e-10 * max(1.0, np.linalg.norm(a))
        assert np.all(np.diff(dec.eigvals) <= 1e-12)
        assert np.linalg.norm(dec.eigvecs @ dec.eigvecs.conj().T - np.eye(5)) < 1e-10


def test_evd_deterministic():
    rng = np.random.default_rng(1)
    a = random_hermitian(rng, 4)
    d1 = sorted_evd(a)
    d2 = sorted_evd(a.copy())
    assert np.array_equal(d1.eigvals, d2.eigvals)
    assert np.array_equal(d1.eigvecs, d2.eigvecs)


def test_evd_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        sorted_evd(np.array([[np.nan, 0], [0, 1.0]]))
    with pytest.raises(InvalidInputError):
        sorted_evd(np.array([[0, 1.0], [-1.0, 0]]))  # skew, not Hermitian


def test_svd_diagonal_and_zero():
    t = sorted_svd(np.diag([2.0, 5.0]))
    assert np.allclose(t.singvals, [5.0, 2.0])
    assert np.allclose(np.abs(t.left) @ np.abs(t.left).T, np.eye(2), atol=1e-12)
    z = sorted_svd(np.zeros((3, 2)))
    assert np.allclose(z.singvals, 0.0)


def test_svd_reconstruction_and_phase():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = crandn(rng, 4, 3)
        t = sorted_svd(a)
        assert np.linalg.norm(t.reconstruct() - a) < 1e-10 * np.linalg.norm(a)
        # largest-magnitude entry of each paired left vector is real positive
        for j in range(3):
            i = np.argmax(np.abs(t.left[:, j]))
            piv = t.left[i, j]
            assert abs(piv.imag) < 1e-12 and piv.real > 0


def test_svd_deterministic():
    rng = np.random.default_rng(3)
    a = crandn(rng, 5, 4)
    t1, t2 = sorted_svd(a), sorted_svd(a.copy())
    assert np.array_equal(t1.left, t2.left)
    assert np.array_equal(t1.singvals, t2.singvals)
    assert np.array_equal(t1.right, t2.right)


def test_hermitian_sqrt_examples():
    assert np.allclose(hermitian_sqrt(np.diag([4.0, 1.0])), np.diag([2.0, 1.0]))
    assert np.allclose(hermitian_sqrt(np.eye(3)), np.eye(3))


def test_hermitian_sqrt_random_psd():
    rng = np.random.default_rng(4)
    for _ in range(10):
        a = random_psd(rng, 4)
        r = hermitian_sqrt(a)
        assert np.linalg.norm(r @ r - a) < 1e-9 * max(1.0, np.linalg.norm(a))
        assert np.min(np.linalg.eigvalsh(r)) > -1e-12


def test_hermitian_sqrt_rejects_indefinite():
    with pytest.raises(NotPsdError):
        hermitian_sqrt(np.diag([1.0, -0.5]))


def test_inv_sqrt_psd():
    rng = np.random.default_rng(5)
    a = random_psd(rng, 4) + 0.5 * np.eye(4)
    w = inv_sqrt_psd(a)
    assert np.linalg.norm(w @ a @ w - np.eye(4)) < 1e-9
    with pytest.raises(NotPsdError):
        inv_sqrt_psd(np.diag([1.0, 0.0]))
    # regularization path survives a singular input
    w = inv_sqrt_psd(np.diag([1.0, 0.0]), regularize=True)
    assert np.all(np.isfinite(w))


def test_random_unitary_is_unitary():
    rng = np.random.default_rng(6)
    q = random_unitary(rng, 5)
    assert np.linalg.norm(q @ q.conj().T - np.eye(5)) < 1e-12
