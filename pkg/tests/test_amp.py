import math

import numpy as np
import pytest

from multiperc.amp import AmpConfig, amp_overlaps, amp_run
from multiperc.erm_sim import generate
from multiperc.prior import PriorSpec
from multiperc.quadrature import philox
from multiperc.reduction import reduce_weights


def test_no_data_returns_prior_mean():
    for teacher in (PriorSpec.gaussian(3), PriorSpec.rademacher(3)):
        X = np.zeros((0, 50))
        y = np.zeros(0, dtype=int)
        state, _ = amp_run(X, y, AmpConfig(teacher=teacher, max_iter=3))
        assert np.abs(state.what).max() == 0.0


def test_first_iteration_matched_filter():
    # With what = 0, chat = prior covariance and g = 0, the first cavity mean
    # is zero, and the first prior field is the plain matched filter
    # X' g / sqrt(d) (the Onsager term vanishes).
    ds = generate(80, 120, 3, "gaussian", seed=3)
    teacher = PriorSpec.gaussian(3)
    from multiperc.amp import _bayes_scores
    from multiperc.reduction import class_regions

    d = ds.d
    X2 = ds.X * ds.X
    prior_cov = teacher.covariance
    chat0 = np.broadcast_to(prior_cov, (d, 2, 2))
    V1 = (X2 @ chat0.reshape(d, 4)).reshape(ds.n, 2, 2) / d
    omega1 = np.zeros((ds.n, 2))  # X @ what0 = 0 and g0 = 0
    _, g1, dg1 = _bayes_scores(ds.y, omega1, V1, class_regions(3).maps)
    gamma_expected = ds.X.T @ g1 / math.sqrt(d)  # + Lam @ what0 = 0

    state, trace = amp_run(ds.X, ds.y, AmpConfig(teacher=teacher, max_iter=1, damping=0.0))
    Lam = -(X2.T @ dg1.reshape(ds.n, 4)).reshape(d, 2, 2) / d
    prec = np.linalg.inv(prior_cov)[None] + Lam
    what_expected = np.linalg.solve(prec, gamma_expected[:, :, None])[:, :, 0]
    assert np.abs(state.what - what_expected).max() < 1e-12


def test_fixed_seed_is_bit_identical():
    ds = generate(150, 300, 3, "rademacher", seed=5)
    cfg = AmpConfig(teacher=PriorSpec.rademacher(3), max_iter=12)
    w_red = reduce_weights(ds.W_star)
    s1, t1 = amp_run(ds.X, ds.y, cfg, teacher_w=w_red)
    s2, t2 = amp_run(ds.X, ds.y, cfg, teacher_w=w_red)
    assert np.array_equal(s1.what, s2.what)
    assert t1.delta == t2.delta
    assert all(np.array_equal(a, b) for a, b in zip(t1.q, t2.q))


def test_overlaps_examples():
    rng = philox(6)
    w = rng.standard_normal((500, 2))
    m, q = amp_overlaps(w, w)
    assert np.allclose(m, q)
    m0, q0 = amp_overlaps(np.zeros_like(w), w)
    assert np.abs(m0).max() == 0.0 and np.abs(q0).max() == 0.0


def test_independent_overlap_clt_bound():
    rng = philox(7)
    d = 10_000
    w_star = rng.standard_normal((d, 2))
    w_rand = rng.standard_normal((d, 2))
    m, _ = amp_overlaps(w_rand, w_star)
    assert np.abs(m).max() < 10.0 / math.sqrt(d)


def test_nishimori_tracking_gaussian():
    d = 2000
    ds = generate(d, 3 * d, 3, "gaussian", seed=8)
    w_red = reduce_weights(ds.W_star)
    # The canonical (undamped) recursion tracks the Nishimori line; damping
    # mixes iterates across time and transiently leaves it.
    state, trace = amp_run(ds.X, ds.y, AmpConfig(teacher=PriorSpec.gaussian(3), tol=1e-5,
                                                 damping=0.0), teacher_w=w_red)
    assert trace.m, "trace must be recorded when the teacher is supplied"
    for m_t, q_t in zip(trace.m, trace.q):
        assert np.abs(m_t - q_t).max() < 0.1


def test_labels_validated():
    X = np.zeros((3, 4))
    with pytest.raises(ValueError):
        amp_run(X, np.array([0, 1, 2]), AmpConfig(teacher=PriorSpec.gaussian(3)))
