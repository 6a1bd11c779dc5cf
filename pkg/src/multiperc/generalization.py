"""Asymptotic misclassification rates from overlap matrices.

The teacher and student local fields on a fresh sample are jointly Gaussian
with covariance assembled from (m, q, Q*); the 0/1 error is the probability
that their argmax labels disagree.  Monte Carlo with a counter-based
generator keeps the estimates reproducible and lets learning curves share
common random numbers across grid points.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .quadrature import philox
from .reduction import argmax_labels
from .smallmat import eigh_floor, inverse, sqrt_spd

_CHUNK = 500_000


def _psd_check(mat: np.ndarray, what: str, floor: float = -1e-8):
    w = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if w.min() < floor * max(1.0, abs(w.max())):
        raise ValueError(f"{what} is not PSD (eigenvalue {w.min():.3e})")


def _sqrt_floored(mat: np.ndarray) -> np.ndarray:
    return sqrt_spd(eigh_floor(mat, 0.0))


def gen_error_bayes(q, Qstar, k: int, n_mc: int = 2_000_000, seed: int = 0):
    """Bayes misclassification rate from the single overlap q.

    Sampling uses the shared-field lift: the student field is q^{1/2} xi and
    the teacher field adds independent (Q* - q)^{1/2} noise on top, which
    realizes the joint covariance [[Q*, q], [q, q]] of the Bayes branch.
    Returns (error, binomial stderr).
    """
    q = np.asarray(q, float)
    Qstar = np.asarray(Qstar, float)
    _psd_check(Qstar - q, "Q* - q")
    _psd_check(q, "q")
    s_q = _sqrt_floored(q)
    s_v = _sqrt_floored(Qstar - q)
    rng = philox(seed)
    mismatch = 0
    for start in range(0, n_mc, _CHUNK):
        n = min(_CHUNK, n_mc - start)
        xi = rng.standard_normal((n, q.shape[0]))
        extra = rng.standard_normal((n, q.shape[0]))
        student = xi @ s_q
        teacher = student + extra @ s_v
        mismatch += int(np.sum(argmax_labels(student, k) != argmax_labels(teacher, k)))
    eps = mismatch / n_mc
    return eps, math.sqrt(max(eps * (1.0 - eps), 1e-300) / n_mc)


def gen_error_erm(m, q, Qstar, k: int, n_mc: int = 2_000_000, seed: int = 0):
    """ERM misclassification rate from (m, q, Q*).

    Teacher field nu ~ N(0, Q*); student field mu | nu is Gaussian with mean
    m' Q*^{-1} nu and covariance q - m' Q*^{-1} m (m oriented teacher-row,
    student-column).  Returns (error, binomial stderr).
    """
    m = np.asarray(m, float)
    q = np.asarray(q, float)
    Qstar = np.asarray(Qstar, float)
    joint = np.block([[Qstar, m], [m.T, q]])
    _psd_check(joint, "[[Q*, m], [m', q]]")
    Qinv = inverse(Qstar)
    cond_cov = q - m.T @ Qinv @ m
    s_t = _sqrt_floored(Qstar)
    s_c = _sqrt_floored(cond_cov)
    gain = Qinv @ m
    rng = philox(seed)
    mismatch = 0
    for start in range(0, n_mc, _CHUNK):
        n = min(_CHUNK, n_mc - start)
        xi = rng.standard_normal((n, q.shape[0]))
        eta = rng.standard_normal((n, q.shape[0]))
        teacher = xi @ s_t
        student = teacher @ gain + eta @ s_c
        mismatch += int(np.sum(argmax_labels(student, k) != argmax_labels(teacher, k)))
    eps = mismatch / n_mc
    return eps, math.sqrt(max(eps * (1.0 - eps), 1e-300) / n_mc)


def gen_error_paired(overlaps: Sequence, Qstar, k: int, n_mc: int = 2_000_000, seed: int = 0):
    """Errors of several estimators against a shared teacher field.

    `overlaps` is a sequence of (m, q) pairs; Bayes estimators pass m = q.
    Sharing the teacher sample across estimators makes error *differences*
    resolvable far below the individual-error noise.  Returns
    (eps, stderr, gap, gap_stderr) where gap[i, j] estimates eps_i - eps_j.
    """
    Qstar = np.asarray(Qstar, float)
    n_est = len(overlaps)
    Qinv = inverse(Qstar)
    gains, conds = [], []
    for m, q in overlaps:
        m = np.asarray(m, float)
        q = np.asarray(q, float)
        _psd_check(np.block([[Qstar, m], [m.T, q]]), "[[Q*, m], [m', q]]")
        gains.append(Qinv @ m)
        conds.append(_sqrt_floored(q - m.T @ Qinv @ m))
    s_t = _sqrt_floored(Qstar)
    rng = philox(seed)
    dim = Qstar.shape[0]
    sum_i = np.zeros(n_est)
    sum_ii = np.zeros(n_est)
    sum_d = np.zeros((n_est, n_est))
    sum_dd = np.zeros((n_est, n_est))
    for start in range(0, n_mc, _CHUNK):
        n = min(_CHUNK, n_mc - start)
        teacher = rng.standard_normal((n, dim)) @ s_t
        lab_t = argmax_labels(teacher, k)
        ind = np.empty((n_est, n))
        for i, (gain, cond) in enumerate(zip(gains, conds)):
            student = teacher @ gain + rng.standard_normal((n, dim)) @ cond
            ind[i] = argmax_labels(student, k) != lab_t
        sum_i += ind.sum(axis=1)
        sum_ii += (ind * ind).sum(axis=1)
        d = ind[:, None, :] - ind[None, :, :]
        sum_d += d.sum(axis=2)
        sum_dd += (d * d).sum(axis=2)
    eps = sum_i / n_mc
    stderr = np.sqrt(np.maximum(sum_ii / n_mc - eps**2, 1e-300) / n_mc)
    gap = sum_d / n_mc
    gap_stderr = np.sqrt(np.maximum(sum_dd / n_mc - gap**2, 1e-300) / n_mc)
    return eps, stderr, gap, gap_stderr
