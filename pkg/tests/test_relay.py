import numpy as np
import pytest

from mmo.channels import exponential_corr, sample_relay_csi
from mmo.constraints import Joint, Shaping, constraint_gap, per_antenna, sum_power
from mmo.exceptions import InvalidInputError
from mmo.linalg import crandn, hermitian_sqrt, random_unitary
from mmo.majorization import majorizes_additive
from mmo.relay import (HopState, MseMatrix, ObjectiveSpec, RelayScenario,
                       cascade_factor, cascade_mse_matrix, cascade_solve,
                       dft_matrix, evaluate_rate, f_eigen, feedback_matrix,
                       first_rotation, gmd, hop_amplification,
                       hop_eigenvalues, hop_noise_covariance, inner_rotations,
                       objective_scalar, robust_update_hop)
from mmo.structures import StructuredSolution
from mmo.waterfill import waterfill


def _scenario(rng, hops=2, n=3, con=None, sigma2=0.5, sigma_e2=0.05, kind=1, w=None):
    psi_base = exponential_corr(0.6, n)
    draws = [sample_relay_csi(sigma_e2, psi_base, rng) for _ in range(hops)]
    con = con or sum_power(2.0, n)
    return RelayScenario(est_channels=tuple(d[0] for d in draws),
                         error_covs=tuple(d[2] for d in draws),
                         noise_vars=(sigma2,) * hops, source_var=1.0,
                         constraints=(con,) * hops,
                         objective=ObjectiveSpec(kind=kind, weight_matrix=w))


def _forwarders(xs):
    return [StructuredSolution(left_basis=x, gains=np.ones(x.shape[1]),
                               right_unitary=np.eye(x.shape[1]), dense=x)
            for x in xs]


def test_hop_noise_covariance():
    psi = exponential_corr(0.6, 3)
    assert hop_noise_covariance(np.zeros((3, 3)), psi, 0.7) == pytest.approx(0.7)
    assert hop_noise_covariance(np.eye(3), np.zeros((3, 3)), 0.7) == pytest.approx(0.7)
    rng = np.random.default_rng(0)
    f = crandn(rng, 3, 3)
    direct = 0.7 + np.trace(f @ f.conj().T @ psi).real
    assert abs(hop_noise_covariance(f, psi, 0.7) - direct) < 1e-12


def test_hop_amplification():
    assert np.allclose(hop_amplification(np.zeros((2, 2)), np.eye(2), 1.0), np.eye(2))
    # scalar hop: M = sqrt(1 + h^2 f^2 / kappa)
    m = hop_amplification(np.array([[0.5]]), np.array([[2.0]]), 0.25)
    assert abs(m[0, 0] - np.sqrt(1 + 1.0 / 0.25)) < 1e-12
    rng = np.random.default_rng(1)
    f, h = crandn(rng, 3, 3), crandn(rng, 3, 3)
    m = hop_amplification(f, h, 0.8)
    target = h @ f @ f.conj().T @ h.conj().T / 0.8 + np.eye(3)
    assert np.linalg.norm(m @ m - target) < 1e-9
    assert np.min(np.linalg.eigvalsh(m)) >= 1.0 - 1e-10


def test_cascade_mse_zero_forwarders():
    rng = np.random.default_rng(2)
    scn = _scenario(rng, hops=2, n=3)
    state = HopState(forwarders_F=_forwarders([np.zeros((3, 3))] * 2),
                     rotations_Q=[np.eye(3)] * 2, amplifications_M=[None] * 2,
                     noise_covs_K=[None] * 2, feedback_C=np.eye(3))
    mse = cascade_mse_matrix(state, scn)
    assert np.linalg.norm(mse.matrix - np.eye(3)) < 1e-12  # sigma_x^2 C C^H


def test_cascade_mse_scalar_perfect_csi():
    # K=1 scalar, perfect CSI: sigma^2 (1 - g^2/(1+g^2)), g^2 = h^2 f^2 / sn^2
    h, f, sn2 = 1.5, 0.6, 0.3
    scn = RelayScenario(est_channels=(np.array([[h]]),),
                        error_covs=(np.zeros((1, 1)),), noise_vars=(sn2,),
                        source_var=1.0, constraints=(sum_power(1.0, 1),),
                        objective=ObjectiveSpec(kind=1))
    state = HopState(forwarders_F=_forwarders([np.array([[f]])]),
                     rotations_Q=[np.eye(1)], amplifications_M=[None],
                     noise_covs_K=[None], feedback_C=np.eye(1))
    mse = cascade_mse_matrix(state, scn)
    g2 = h * h * f * f / sn2
    assert abs(mse.matrix[0, 0].real - (1 - g2 / (1 + g2))) < 1e-12


def test_cascade_mse_matches_direct_lmmse():
    # independent route through the raw X_k chain and the LMMSE equalizer
    rng = np.random.default_rng(3)
    for _ in range(5):
        hops, n = 2, 3
        scn = _scenario(rng, hops=hops, n=n, sigma_e2=0.04)
        xs = [crandn(rng, n, n) * 0.4 for _ in range(hops)]
        fwd = _forwarders(xs)
        qs = [random_unitary(rng, n) for _ in range(hops)]
        state = HopState(forwarders_F=fwd, rotations_Q=qs,
                         amplifications_M=[None] * hops,
                         noise_covs_K=[None] * hops, feedback_C=np.eye(n))
        ours = cascade_mse_matrix(state, scn).matrix

        # direct route: realized X_k, per-hop received covariances, LMMSE MSE
        sx2 = scn.source_var
        kappas, ms = [], []
        for k in range(hops):
            kap = hop_noise_covariance(xs[k], scn.error_covs[k], scn.noise_vars[k])
            kappas.append(kap)
            ms.append(hop_amplification(xs[k], scn.est_channels[k], kap))
        x_real = []
        prev = np.sqrt(sx2) * np.eye(n)  # K_{n_0}^{1/2} M_0
        for k in range(hops):
            x_real.append(xs[k] @ qs[k] @ np.linalg.inv(prev))
            prev = np.sqrt(kappas[k]) * ms[k]
        chain = np.eye(n)
        r_prev = sx2 * np.eye(n)
        for k in range(hops):
            chain = scn.est_channels[k] @ x_real[k] @ chain
            r_prev_new = (scn.est_channels[k] @ x_real[k] @ r_prev
                          @ x_real[k].conj().T @ scn.est_channels[k].conj().T)
            tr = np.trace(x_real[k] @ r_prev @ x_real[k].conj().T
                          @ scn.error_covs[k]).real
            r_prev = r_prev_new + (scn.noise_vars[k] + tr) * np.eye(n)
            if k == hops - 1:
                denom = r_prev_new + (scn.noise_vars[k] + tr) * np.eye(n)
        direct = sx2 * np.eye(n) - sx2 ** 2 * chain.conj().T @ np.linalg.inv(denom) @ chain
        assert np.linalg.norm(ours - direct) < 1e-9


def test_inner_rotations_telescope():
    rng = np.random.default_rng(4)
    for _ in range(5):
        n = 3
        a1 = crandn(rng, n, n) * 0.4
        a2 = crandn(rng, n, n) * 0.4
        qs = inner_rotations([a1, a2])
        prod = a2 @ qs[0] @ a1
        s_prod = np.linalg.svd(prod, compute_uv=False)
        s_sep = np.sort(np.linalg.svd(a1, compute_uv=False)
                        * np.linalg.svd(a2, compute_uv=False))[::-1]
        assert np.allclose(np.sort(s_prod)[::-1], s_sep, atol=1e-9)


def test_inner_rotation_prealigned_identity():
    a1 = np.diag([0.9, 0.5, 0.2]).astype(complex)
    a2 = np.diag([0.8, 0.4, 0.1]).astype(complex)
    qs = inner_rotations([a1, a2])
    assert np.linalg.norm(qs[0] - np.eye(3)) < 1e-10


def test_first_rotation_kinds():
    rng = np.random.default_rng(5)
    a1 = np.diag([0.9, 0.5, 0.2]).astype(complex)
    spec = ObjectiveSpec(kind=4)
    assert np.linalg.norm(first_rotation(spec, a1) - np.eye(3)) < 1e-10
    # DFT(2) closed form
    d2 = dft_matrix(2)
    assert np.allclose(d2, np.array([[1, 1], [1, -1]]) / np.sqrt(2))
    with pytest.raises(InvalidInputError):
        first_rotation(ObjectiveSpec(kind=5), a1)  # missing cascade data


def test_feedback_matrix():
    assert np.allclose(feedback_matrix(np.diag([4.0, 2.0, 1.0])), np.eye(3))
    low = np.array([[1.0, 0.0], [1.0, 1.0]])
    c = feedback_matrix(low @ low.T)
    assert np.allclose(c, np.array([[1.0, 0.0], [-1.0, 1.0]]))
    rng = np.random.default_rng(6)
    a = crandn(rng, 4, 4)
    mat = a @ a.conj().T + np.eye(4)
    c = feedback_matrix(mat)
    assert np.allclose(np.diag(c), 1.0)
    assert np.allclose(np.triu(c, 1), 0.0)


def test_f_eigen_values():
    assert f_eigen([np.zeros(3)], 2.0, kind="sum_mse") == pytest.approx(6.0)
    lam = 1.7
    assert f_eigen([np.array([lam])], 1.0, kind="sum_mse") == pytest.approx(1 / (1 + lam))
    rng = np.random.default_rng(7)
    lams = [rng.uniform(0.1, 3.0, 3), rng.uniform(0.1, 3.0, 3)]
    d = np.ones(3)
    for l in lams:
        l_sorted = np.sort(l)[::-1]
        d *= l_sorted / (1 + l_sorted)
    assert f_eigen(lams, 1.0, kind="sum_rate") == pytest.approx(-np.sum(np.log(1 - d)))
    with pytest.raises(InvalidInputError):
        f_eigen([np.array([-0.5])], 1.0)


def test_matrix_path_equals_eigen_path_all_kinds():
    rng = np.random.default_rng(8)
    for kind in range(1, 7):
        w = None
        if kind == 2:
            a = crandn(rng, 3, 3)
            w = (a @ a.conj().T).real + np.eye(3)
            w = 0.5 * (w + w.T)
        scn = _scenario(rng, hops=2, n=3, con=per_antenna([1.0, 1.0, 1.0]),
                        kind=kind, w=w)
        state = cascade_solve(scn, max_iter=15)
        lams = [hop_eigenvalues(scn.est_channels[k], state.forwarders_F[k].dense,
                                scn.error_covs[k], scn.noise_vars[k])
                for k in range(2)]
        eig_val = objective_scalar(scn.objective, lams, scn.source_var)
        mse = cascade_mse_matrix(state, scn)
        if kind == 1:
            mat_val = np.linalg.slogdet(mse.matrix)[1].real
        elif kind == 2:
            mat_val = np.trace(w @ mse.matrix).real
        elif kind == 3:
            mat_val = np.max(np.diag(mse.matrix).real)
        elif kind == 4:
            mat_val = float(np.sum(np.log(np.diag(mse.matrix).real)))
        elif kind == 5:
            mat_val = float(np.max(np.abs(np.diag(mse.cholesky_L)) ** 2))
        else:
            mat_val = float(np.min(np.abs(np.diag(mse.cholesky_L)) ** 2))
        assert abs(eig_val - mat_val) < 1e-8 * max(1.0, abs(mat_val))


def test_equal_diagonal_properties():
    rng = np.random.default_rng(9)
    scn = _scenario(rng, hops=2, n=4, con=per_antenna([1.0] * 4), kind=3)
    state = cascade_solve(scn, max_iter=15)
    mse = cascade_mse_matrix(state, scn)
    diag = np.diag(mse.matrix).real
    assert diag.max() - diag.min() < 1e-8

    scn = _scenario(rng, hops=2, n=4, con=per_antenna([1.0] * 4), kind=5)
    state = cascade_solve(scn, max_iter=15)
    mse = cascade_mse_matrix(state, scn)
    ld = np.abs(np.diag(mse.cholesky_L)) ** 2
    assert ld.max() - ld.min() < 1e-8 * max(1.0, ld.max())
    # equal value is the geometric mean of the per-stream MSEs
    lams = [hop_eigenvalues(scn.est_channels[k], state.forwarders_F[k].dense,
                            scn.error_covs[k], scn.noise_vars[k]) for k in range(2)]
    d = np.ones(4)
    for l in lams:
        ls = np.sort(l)[::-1]
        d *= ls / (1 + ls)
    geo = np.exp(np.mean(np.log(1.0 - d)))
    assert abs(ld[0] - geo) < 1e-8


def test_majorization_cross_check_obj3_obj4():
    rng = np.random.default_rng(10)
    scn3 = _scenario(rng, hops=2, n=3, con=sum_power(2.0, 3), kind=3)
    state = cascade_solve(scn3, max_iter=15)
    mse = cascade_mse_matrix(state, scn3)
    achieved = np.diag(mse.matrix).real
    factors = [cascade_factor(scn3.est_channels[k], state.forwarders_F[k].dense,
                              scn3.error_covs[k], scn3.noise_vars[k])
               for k in range(2)]
    for _ in range(100):
        q1 = random_unitary(rng, 3)
        t = (factors[1] @ state.rotations_Q[1]) @ (factors[0] @ q1)
        phi = scn3.source_var * (np.eye(3) - t.conj().T @ t)
        other = np.diag(phi).real
        # equal-diagonal (DFT) solution is majorized by any other rotation's diag
        assert majorizes_additive(achieved, other, rel_tol=1e-7)


def test_gmd_properties():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = int(rng.integers(2, 6))
        sigma = rng.uniform(0.2, 3.0, n)
        q, r, p = gmd(sigma)
        assert np.linalg.norm(q @ r @ p.conj().T - np.diag(sigma)) < 1e-10
        assert np.linalg.norm(q @ q.conj().T - np.eye(n)) < 1e-10
        assert np.linalg.norm(p @ p.conj().T - np.eye(n)) < 1e-10
        assert np.linalg.norm(np.tril(r, -1)) < 1e-10
        geo = np.exp(np.mean(np.log(sigma)))
        assert np.allclose(np.diag(r), geo, atol=1e-10)


def test_dft_matrix_unitary():
    for n in (2, 3, 4, 8):
        d = dft_matrix(n)
        assert np.linalg.norm(d @ d.conj().T - np.eye(n)) < 1e-12


def test_robust_reduces_to_nonrobust_at_zero_error():
    rng = np.random.default_rng(12)
    n = 3
    h = crandn(rng, n, n)
    scn = RelayScenario(est_channels=(h,), error_covs=(np.zeros((n, n)),),
                        noise_vars=(0.5,), source_var=1.0,
                        constraints=(Joint(total=2.0, cap=1.4),),
                        objective=ObjectiveSpec(kind=1))
    state = HopState(forwarders_F=_forwarders([np.zeros((n, n))]),
                     rotations_Q=[np.eye(n)], amplifications_M=[None],
                     noise_covs_K=[None], feedback_C=np.eye(n))
    sol = robust_update_hop(scn, state, 0)
    # non-robust Lemma structure: V from the SVD of K^{-1/2} H, capped gains
    from mmo.structures import solve_joint
    pi = h.conj().T @ h / 0.5
    ref = solve_joint(pi, 2.0, 1.4)
    lam_a = np.sort(np.linalg.eigvalsh(sol.dense @ sol.dense.conj().T))
    lam_b = np.sort(np.linalg.eigvalsh(ref.dense @ ref.dense.conj().T))
    assert np.allclose(lam_a, lam_b, atol=1e-9)
    assert np.linalg.norm(np.abs(sol.dense) - np.abs(ref.dense)) < 1e-6


def test_robust_denominator_limit():
    # F -> 0 makes the normalization denominator -> 1 (scale equals sigma_n)
    rng = np.random.default_rng(13)
    n = 2
    psi = exponential_corr(0.6, n)
    h = crandn(rng, n, n)
    scn = RelayScenario(est_channels=(h,), error_covs=(psi,), noise_vars=(1.0,),
                        source_var=1.0,
                        constraints=(Joint(total=1e-9, cap=1e-9),),
                        objective=ObjectiveSpec(kind=1))
    state = HopState(forwarders_F=_forwarders([np.zeros((n, n))]),
                     rotations_Q=[np.eye(n)], amplifications_M=[None],
                     noise_covs_K=[None], feedback_C=np.eye(n))
    sol = robust_update_hop(scn, state, 0)
    assert np.trace(sol.dense @ sol.dense.conj().T).real <= 1e-9 + 1e-12


def test_cascade_solve_symmetric_hops():
    # identical hops with isotropic error statistics (where the robust bound
    # is tight) must produce identical per-hop gain profiles
    rng = np.random.default_rng(14)
    n = 3
    h = crandn(rng, n, n)
    for psi in (np.zeros((n, n)), 0.05 * np.eye(n)):
        scn = RelayScenario(est_channels=(h, h), error_covs=(psi, psi),
                            noise_vars=(0.5, 0.5), source_var=1.0,
                            constraints=(sum_power(2.0, n),) * 2,
                            objective=ObjectiveSpec(kind=1))
        state = cascade_solve(scn, rel_tol=0.0, max_iter=120)
        lam0 = hop_eigenvalues(h, state.forwarders_F[0].dense, psi, 0.5)
        lam1 = hop_eigenvalues(h, state.forwarders_F[1].dense, psi, 0.5)
        assert np.allclose(lam0, lam1, atol=1e-6)
        g0 = np.sort(state.forwarders_F[0].gains)
        g1 = np.sort(state.forwarders_F[1].gains)
        assert np.allclose(g0, g1, atol=1e-6)


def test_cascade_solve_monotone_and_feasible():
    rng = np.random.default_rng(15)
    con = per_antenna([1.0, 1.0, 1.0])
    scn = _scenario(rng, hops=3, n=3, con=con, sigma_e2=0.05)
    state = cascade_solve(scn, max_iter=20)
    trace = np.array(state.objective_trace)
    assert np.all(np.diff(trace) <= 1e-8)  # minimization
    for sol in state.forwarders_F:
        assert constraint_gap(con, sol.dense) <= 1e-6
    # MSE matrix PSD and dominated by sigma^2 C C^H
    mse = cascade_mse_matrix(state, scn)
    w = np.linalg.eigvalsh(mse.matrix)
    assert w[0] > -1e-9
    dom = scn.source_var * state.feedback_C @ state.feedback_C.conj().T - mse.matrix
    assert np.linalg.eigvalsh(dom)[0] > -1e-9


def test_mse_matrix_bound_holds_nonlinear():
    rng = np.random.default_rng(16)
    scn = _scenario(rng, hops=2, n=3, con=sum_power(2.0, 3), kind=5)
    state = cascade_solve(scn, max_iter=15)
    mse = cascade_mse_matrix(state, scn)
    dom = scn.source_var * state.feedback_C @ state.feedback_C.conj().T - mse.matrix
    assert np.linalg.eigvalsh(dom)[0] > -1e-9
