"""Finite-dimensional ground truth: data generation and exact ERM solvers.

The preactivation convention is W' x / sqrt(d) throughout, so the ridge
strength lambda in these objectives lines up with the lambda entering the
asymptotic equations.  The square loss has a closed-form solution (primal or
dual depending on the aspect ratio); cross-entropy is minimized by Newton-CG
with an explicit gradient-norm certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.linalg import cho_factor, cho_solve

from .quadrature import philox
from .reduction import argmax_labels, reduce_weights


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    W_star: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def k(self) -> int:
        return self.W_star.shape[1]


@dataclass(frozen=True)
class ErmSolution:
    W: np.ndarray
    objective: float
    grad_norm: float
    iterations: int


def generate(d: int, n: int, k: int, teacher_kind: str, seed: int) -> Dataset:
    """Sample a teacher matrix, Gaussian inputs and argmax labels.

    Labels use the raw fields W*' x (the argmax is scale invariant, so the
    1/sqrt(d) convention does not affect them).
    """
    if d < 1 or n < 0 or k < 2:
        raise ValueError("need d >= 1, n >= 0, k >= 2")
    rng = philox(seed)
    if teacher_kind == "gaussian":
        W_star = rng.standard_normal((d, k))
    elif teacher_kind == "rademacher":
        W_star = rng.integers(0, 2, size=(d, k)) * 2.0 - 1.0
    else:
        raise ValueError(f"unknown teacher kind {teacher_kind!r}")
    X = rng.standard_normal((n, d))
    y = argmax_labels(X @ W_star, k)
    return Dataset(X=X, y=y, W_star=W_star, seed=seed)


def onehot(y: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(y), k))
    out[np.arange(len(y)), np.asarray(y) - 1] = 1.0
    return out


def fit_square(ds: Dataset, lam: float) -> ErmSolution:
    """Ridge regression onto one-hot labels, solved exactly by Cholesky.

    Minimizes sum_mu ||W'x_mu/sqrt(d) - y_mu||^2/2 + lam ||W||_F^2/2.  For
    n < d the dual (n x n) system is solved instead.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    X, d, n = ds.X, ds.d, ds.n
    Y = onehot(ds.y, ds.k)
    if n >= d:
        G = X.T @ X / d + lam * np.eye(d)
        W = cho_solve(cho_factor(G), X.T @ Y) / math.sqrt(d)
    else:
        G = X @ X.T / d + lam * np.eye(n)
        W = X.T @ cho_solve(cho_factor(G), Y) / math.sqrt(d)
    grad = X.T @ (X @ W / math.sqrt(d) - Y) / math.sqrt(d) + lam * W
    z = X @ W / math.sqrt(d)
    obj = 0.5 * float(np.sum((z - Y) ** 2)) + 0.5 * lam * float(np.sum(W * W))
    return ErmSolution(W=W, objective=obj, grad_norm=float(np.abs(grad).max()), iterations=1)


def _ce_value_grad(wflat: np.ndarray, X: np.ndarray, Y: np.ndarray, lam: float, d: int, k: int):
    W = wflat.reshape(d, k)
    Z = X @ W / math.sqrt(d)
    Z -= Z.max(axis=1, keepdims=True)
    expz = np.exp(Z)
    norm = expz.sum(axis=1)
    P = expz / norm[:, None]
    val = float(np.sum(np.log(norm)) - np.sum(Z * Y)) + 0.5 * lam * float(wflat @ wflat)
    G = X.T @ (P - Y) / math.sqrt(d) + lam * W
    return val, G.ravel()


def fit_cross_entropy(ds: Dataset, lam: float, tol: Optional[float] = None) -> ErmSolution:
    """Ridge-regularized softmax regression to a certified gradient norm.

    Newton-CG with Hessian-vector products; the default tolerance scales
    with n because gradient norms are extensive.  Raises if the certificate
    is not met (strong convexity makes that a genuine failure).
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    X, d, k, n = ds.X, ds.d, ds.k, ds.n
    Y = onehot(ds.y, k)
    if tol is None:
        tol = 1e-8 * max(n, 1)

    def hessp(wflat, vflat, *_args):
        W = wflat.reshape(d, k)
        Vm = vflat.reshape(d, k)
        Z = X @ W / math.sqrt(d)
        Z -= Z.max(axis=1, keepdims=True)
        expz = np.exp(Z)
        P = expz / expz.sum(axis=1, keepdims=True)
        U = X @ Vm / math.sqrt(d)
        HU = P * U - P * np.sum(P * U, axis=1, keepdims=True)
        return (X.T @ HU / math.sqrt(d) + lam * Vm).ravel()

    w0 = np.zeros(d * k)
    res = optimize.minimize(
        _ce_value_grad, w0, args=(X, Y, lam, d, k), method="Newton-CG",
        jac=True, hessp=hessp, options={"xtol": 1e-12, "maxiter": 500},
    )
    wflat = res.x
    val, grad = _ce_value_grad(wflat, X, Y, lam, d, k)
    gnorm = float(np.linalg.norm(grad))
    if gnorm > tol:
        # Polish with a few more Newton-CG rounds from the current point.
        res = optimize.minimize(
            _ce_value_grad, wflat, args=(X, Y, lam, d, k), method="Newton-CG",
            jac=True, hessp=hessp, options={"xtol": 1e-16, "maxiter": 500},
        )
        wflat = res.x
        val, grad = _ce_value_grad(wflat, X, Y, lam, d, k)
        gnorm = float(np.linalg.norm(grad))
    if gnorm > tol:
        raise RuntimeError(f"cross-entropy solver stalled at gradient norm {gnorm:.3e} > {tol:.3e}")
    return ErmSolution(W=wflat.reshape(d, k), objective=val, grad_norm=gnorm,
                       iterations=int(res.nit))


def empirical_overlaps(W: np.ndarray, W_star: np.ndarray, d: int, reduce: bool = False):
    """(m, q) = (W_red*' W_red / d, W' W / d), optionally in reduced coordinates.

    m is oriented teacher-row, student-column, matching the asymptotic
    formulas.
    """
    if reduce:
        W = reduce_weights(W)
        W_star = reduce_weights(W_star)
    return W_star.T @ W / d, W.T @ W / d


def test_error(W: np.ndarray, W_star: np.ndarray, n_test: int, seed: int):
    """Fresh-sample misclassification rate and its binomial stderr."""
    if n_test < 1:
        raise ValueError("n_test must be >= 1")
    d, k = W_star.shape
    rng = philox(seed, stream=1)
    err = 0
    chunk = 200_000
    for start in range(0, n_test, chunk):
        n = min(chunk, n_test - start)
        X = rng.standard_normal((n, d))
        err += int(np.sum(argmax_labels(X @ W, k) != argmax_labels(X @ W_star, k)))
    eps = err / n_test
    return eps, math.sqrt(max(eps * (1.0 - eps), 1e-300) / n_test)
