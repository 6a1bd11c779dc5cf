import math

import numpy as np
import pytest

from multiperc.prior import (
    PriorSpec,
    atom_denoiser,
    atom_denoiser_batch,
    bayes_prior_update,
    erm_prior_update,
    gaussian_denoiser,
    ridge_denoiser,
)
from multiperc.quadrature import gauss_hermite, philox, tensor_nodes
from multiperc.reduction import reduced_rademacher_prior

SIGMA = np.array([[2.0, 1.0], [1.0, 2.0]])


def random_spd(rng, dim=2, scale=1.0):
    R = rng.standard_normal((dim, dim))
    return scale * (R @ R.T + 0.3 * np.eye(dim))


def test_gaussian_denoiser_examples():
    res = gaussian_denoiser([1.0, 0.0], np.zeros((2, 2)), SIGMA)
    assert np.allclose(res.f, [2.0, 1.0])
    res0 = gaussian_denoiser([0.0, 0.0], np.zeros((2, 2)), SIGMA)
    assert np.allclose(res0.f, 0.0) and abs(res0.z - 1.0) < 1e-14
    res2 = gaussian_denoiser([1.0, 1.0], np.linalg.inv(SIGMA), SIGMA)
    assert np.allclose(res2.f, [1.5, 1.5])


def test_atom_denoiser_examples():
    prior = reduced_rademacher_prior(3)
    res = atom_denoiser([0.0, 0.0], np.zeros((2, 2)), prior)
    assert abs(res.z - 1.0) < 1e-14 and np.allclose(res.f, 0.0)
    big = atom_denoiser([50.0, 50.0], np.zeros((2, 2)), prior)
    assert np.allclose(big.f, [2.0, 2.0], atol=1e-12)
    tied = atom_denoiser([50.0, 0.0], np.zeros((2, 2)), prior)
    assert np.allclose(tied.f, [2.0, 1.0], atol=1e-12)


def test_atom_denoiser_bruteforce_extended_precision():
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 60
    prior = reduced_rademacher_prior(3)
    rng = philox(21)
    gamma = rng.standard_normal(2) * 3
    Lam = random_spd(rng)
    res = atom_denoiser(gamma, Lam, prior)
    z_mp = mp.mpf(0)
    f_mp = [mp.mpf(0), mp.mpf(0)]
    for pt, w in zip(prior.points, prior.weights):
        expo = mp.e ** (
            mp.mpf(-0.5) * (pt @ Lam @ pt) + mp.mpf(float(gamma @ pt))
        )
        z_mp += mp.mpf(float(w)) * expo
        for i in range(2):
            f_mp[i] += mp.mpf(float(w)) * expo * mp.mpf(float(pt[i]))
    assert abs(res.z - float(z_mp)) < 1e-12 * float(z_mp)
    for i in range(2):
        assert abs(res.f[i] - float(f_mp[i] / z_mp)) < 1e-12


def test_ridge_denoiser_examples():
    res = ridge_denoiser([1.0, -2.0], np.zeros((2, 2)), 1e9, np.eye(2))
    assert np.abs(res.f).max() < 1e-8  # lam -> infinity kills the estimate
    res2 = ridge_denoiser([0.7, -0.3], np.zeros((2, 2)), 1.0, np.eye(2))
    assert np.allclose(res2.f, [0.7, -0.3])
    res3 = ridge_denoiser(np.ones(3), np.eye(3), 1.0, np.eye(3))
    assert np.allclose(res3.f, 0.5 * np.ones(3))


@pytest.mark.parametrize("which", ["gaussian", "atoms", "ridge"])
def test_denoiser_jacobians_match_finite_differences(which):
    rng = philox(22)
    prior = reduced_rademacher_prior(3)
    for _ in range(6):
        gamma = rng.standard_normal(2)
        Lam = random_spd(rng)

        if which == "gaussian":
            fn = lambda g: gaussian_denoiser(g, Lam, SIGMA)
        elif which == "atoms":
            fn = lambda g: atom_denoiser(g, Lam, prior)
        else:
            fn = lambda g: ridge_denoiser(g, Lam, 0.5, SIGMA)
        res = fn(gamma)
        eps = 1e-6
        for i in range(2):
            e = np.zeros(2)
            e[i] = eps
            fd = (fn(gamma + e).f - fn(gamma - e).f) / (2 * eps)
            assert np.abs(res.df[:, i] - fd).max() < 1e-6 * max(1.0, np.abs(fd).max())
        # posterior covariance must be symmetric PSD
        assert np.abs(res.df - res.df.T).max() < 1e-10
        assert np.linalg.eigvalsh(res.df).min() > -1e-10


def test_atom_posterior_mean_in_hull():
    prior = reduced_rademacher_prior(3)
    rng = philox(23)
    for _ in range(20):
        res = atom_denoiser(rng.standard_normal(2) * 4, random_spd(rng), prior)
        assert np.abs(res.f).max() <= 2.0 + 1e-12


def test_teacher_measure_normalization():
    # E_xi[Z*_w(qhat^{1/2} xi, qhat)] = 1 for both teacher priors.  The
    # integrand is a Gaussian reweighting, so the Hermite error is spectral
    # but only once the order outruns the tilt; keep the overlap moderate.
    rng = philox(24)
    rule = gauss_hermite(90)
    nodes, weights = tensor_nodes(rule, 2)
    for _ in range(3):
        qhat = random_spd(rng, scale=0.35)
        rt = np.linalg.cholesky(qhat)
        gammas = nodes @ rt.T
        log_z, _, _ = atom_denoiser_batch(gammas, qhat, reduced_rademacher_prior(3))
        assert abs(weights @ np.exp(log_z) - 1.0) < 1e-6
        zs = [gaussian_denoiser(g, qhat, SIGMA).z for g in gammas]
        assert abs(weights @ np.asarray(zs) - 1.0) < 1e-6


def test_bayes_prior_update_atoms_vs_gaussian_mc():
    # Both closed paths were derived independently of plain sampling; check
    # them against vectorized Monte Carlo at a tame conjugate overlap.
    rng = philox(25)
    rule = gauss_hermite(60)
    qhat = 0.12 * random_spd(rng)
    rt = np.linalg.cholesky(qhat)
    xi = philox(26).standard_normal((1_500_000, 2))
    gam = xi @ rt.T

    q_gauss, psi_gauss = bayes_prior_update(qhat, PriorSpec.gaussian(3), rule)
    B = np.linalg.inv(np.linalg.inv(SIGMA) + qhat)
    lz = 0.5 * np.einsum("ni,ij,nj->n", gam, B, gam) - 0.5 * (
        np.linalg.slogdet(SIGMA)[1] + np.linalg.slogdet(np.linalg.inv(SIGMA) + qhat)[1]
    )
    z = np.exp(lz)
    f = gam @ B
    zff = np.einsum("n,ni,nj->nij", z, f, f)
    q_mc = zff.mean(axis=0)
    tol = 4 * zff.std(axis=0).max() / math.sqrt(len(z))
    assert np.abs(q_gauss - q_mc).max() < tol
    psi_mc = np.mean(z * lz)
    assert abs(psi_gauss - psi_mc) < 4 * (z * lz).std() / math.sqrt(len(z))

    q_at, psi_at = bayes_prior_update(qhat, PriorSpec.rademacher(3), rule)
    lz2, f2, _ = atom_denoiser_batch(gam, qhat, reduced_rademacher_prior(3))
    z2 = np.exp(lz2)
    zff2 = np.einsum("n,ni,nj->nij", z2, f2, f2)
    assert np.abs(q_at - zff2.mean(axis=0)).max() < 4 * zff2.std(axis=0).max() / math.sqrt(len(z2))
    assert abs(psi_at - np.mean(z2 * lz2)) < 4 * (z2 * lz2).std() / math.sqrt(len(z2))


def test_erm_prior_update_gaussian_closed_form_vs_quadrature():
    # Adaptive 2-d quadrature oracle: the teacher reweighting has heavy tails
    # under plain sampling, so a deterministic oracle is the honest check.
    from scipy import integrate

    rng = philox(27)
    rule = gauss_hermite(60)
    mhat = 0.25 * random_spd(rng)
    qhat = 0.2 * random_spd(rng)
    vhat = random_spd(rng)
    lam = 0.05
    C = SIGMA
    m, q, V = erm_prior_update(mhat, qhat, vhat, PriorSpec.gaussian(3), lam, C, rule)

    A = lam * np.linalg.inv(C) + vhat
    assert np.abs(V - np.linalg.inv(A)).max() < 1e-10

    w_half, U = np.linalg.eigh(qhat)
    rt = (U * np.sqrt(w_half)) @ U.T
    irt = (U / np.sqrt(w_half)) @ U.T
    Lam_star = (mhat @ irt) @ (mhat @ irt).T
    Bs = np.linalg.inv(np.linalg.inv(C) + Lam_star)
    Ainv = np.linalg.inv(A)
    log_c = -0.5 * (np.linalg.slogdet(C)[1] + np.linalg.slogdet(np.linalg.inv(C) + Lam_star)[1])

    def entry(i, j, which):
        def f(x1, x2):
            xi = np.array([x1, x2])
            gs = mhat @ irt @ xi
            z = math.exp(0.5 * gs @ Bs @ gs + log_c)
            f_star = Bs @ gs
            f_stud = Ainv @ rt @ xi
            left = f_star if which == "m" else f_stud
            return z * left[i] * f_stud[j] * math.exp(-0.5 * (x1 * x1 + x2 * x2)) / (2 * math.pi)
        return f

    for i in range(2):
        for j in range(2):
            want_m = integrate.dblquad(entry(i, j, "m"), -14, 14, -14, 14, epsabs=1e-10)[0]
            want_q = integrate.dblquad(entry(i, j, "q"), -14, 14, -14, 14, epsabs=1e-10)[0]
            assert abs(m[i, j] - want_m) < 1e-4 * max(1.0, abs(want_m))
            assert abs(q[i, j] - want_q) < 1e-4 * max(1.0, abs(want_q))


def test_priorspec_validation():
    with pytest.raises(ValueError):
        PriorSpec("ridge_erm", 3, lam=0.0, covariance=np.eye(2))
    with pytest.raises(ValueError):
        PriorSpec("nonsense", 3)
    spec = PriorSpec.rademacher(3)
    assert spec.is_atomic and spec.dim == 2
    assert abs(spec.entropy() - 2.75 * math.log(2.0)) < 1e-14
    assert np.allclose(PriorSpec.gaussian(3).qstar(), SIGMA)
    assert np.allclose(spec.qstar(), SIGMA)
