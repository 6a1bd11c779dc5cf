"""Prior-side partition functions and denoisers.

Three families: the Gaussian teacher/student prior (closed form), finite
atom priors (exact enumeration, replacing sampling), and the beta -> infinity
ridge prior of ERM.  The teacher-weighted expectations that drive the state
evolution are also here, in forms that stay exact when the conjugate overlap
grows without bound:

* Gaussian teachers collapse to closed-form matrix algebra.
* Atom teachers use the tilted-mixture identity
  E_xi[Z(. ) g(xi)] = sum_a p_a E_u[g(u + shift_a)], which is exact for any
  conjugate overlap and keeps the quadrature on an O(1) scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .quadrature import GaussHermiteRule, gauss_hermite, tensor_nodes
from .reduction import AtomPrior, binary_prior, reduced_gaussian_covariance, reduced_rademacher_prior
from .smallmat import cholesky, eigh_floor, inverse, logdet, sqrt_spd


@dataclass(frozen=True)
class PriorSpec:
    """Teacher or student prior: kind, class count and parameters."""

    kind: str  # "gaussian_bayes" | "rademacher_bayes" | "ridge_erm"
    k: int
    lam: float = 0.0
    covariance: Optional[np.ndarray] = None
    atoms: Optional[AtomPrior] = None

    def __post_init__(self):
        if self.kind not in ("gaussian_bayes", "rademacher_bayes", "ridge_erm"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "ridge_erm" and self.lam <= 0:
            raise ValueError("ridge prior needs lam > 0")
        if self.covariance is not None:
            cov = np.asarray(self.covariance, float)
            cholesky(cov)
            object.__setattr__(self, "covariance", cov)

    @classmethod
    def gaussian(cls, k: int) -> "PriorSpec":
        """Reduced Gaussian teacher: i.i.d. N(0,1) columns, differenced."""
        return cls("gaussian_bayes", k, covariance=reduced_gaussian_covariance(k))

    @classmethod
    def gaussian_full(cls, k: int) -> "PriorSpec":
        """Gaussian teacher in full k coordinates (square-loss runs)."""
        return cls("gaussian_bayes", k, covariance=np.eye(k))

    @classmethod
    def rademacher(cls, k: int) -> "PriorSpec":
        return cls("rademacher_bayes", k, atoms=reduced_rademacher_prior(k))

    @classmethod
    def rademacher_binary(cls) -> "PriorSpec":
        """Classical +-1 binary teacher used for the two-class calibration."""
        return cls("rademacher_bayes", 2, atoms=binary_prior())

    @classmethod
    def ridge(cls, k: int, lam: float, covariance: np.ndarray) -> "PriorSpec":
        return cls("ridge_erm", k, lam=lam, covariance=covariance)

    @property
    def dim(self) -> int:
        if self.atoms is not None:
            return self.atoms.dim
        return self.covariance.shape[0]

    @property
    def is_atomic(self) -> bool:
        return self.kind == "rademacher_bayes"

    def qstar(self) -> np.ndarray:
        """Second-moment matrix of the prior (the teacher overlap Q*)."""
        if self.is_atomic:
            pts, wts = self.atoms.points, self.atoms.weights
            return (pts * wts[:, None]).T @ pts
        return self.covariance

    def entropy(self) -> float:
        if not self.is_atomic:
            raise ValueError("entropy is defined for atom priors only")
        return self.atoms.entropy()


@dataclass(frozen=True)
class PriorResult:
    z: float
    f: np.ndarray
    df: np.ndarray
    log_z: float = None

    def __post_init__(self):
        if self.log_z is None:
            object.__setattr__(self, "log_z", math.log(self.z) if self.z > 0 else -math.inf)


# ---------------------------------------------------------------------------
# Denoisers


def gaussian_denoiser(gamma, Lam, Sigma) -> PriorResult:
    """Gaussian-prior partition/mean/covariance at natural parameters (gamma, Lam).

    Z = exp(gamma' B gamma / 2) / sqrt(det Sigma det(Sigma^-1 + Lam)) with
    B = (Sigma^-1 + Lam)^-1; f = B gamma; df = B.
    """
    gamma = np.asarray(gamma, float).ravel()
    Sigma = np.asarray(Sigma, float)
    Lam = np.asarray(Lam, float)
    prec = inverse(Sigma) + Lam
    B = inverse(prec)
    cholesky(B)  # combined precision must be SPD
    log_z = 0.5 * gamma @ B @ gamma - 0.5 * (logdet(Sigma) + logdet(prec))
    return PriorResult(z=math.exp(log_z), f=B @ gamma, df=B, log_z=log_z)


def atom_denoiser(gamma, Lam, prior: AtomPrior) -> PriorResult:
    """Exact finite-support denoiser; all sums in the log domain."""
    log_z, f, df = atom_denoiser_batch(np.asarray(gamma, float)[None, :], Lam, prior)
    lz = float(log_z[0])
    return PriorResult(z=math.exp(lz) if lz < 700 else math.inf, f=f[0], df=df[0], log_z=lz)


def atom_denoiser_batch(gammas: np.ndarray, Lam, prior: AtomPrior, per_row_lam=None):
    """Batched (log Z, posterior mean, posterior covariance) over gamma rows.

    Lam is one matrix shared by all rows; per_row_lam (N, dim, dim) overrides
    it with an individual quadratic term per row (message passing needs one
    per coordinate).
    """
    gammas = np.atleast_2d(np.asarray(gammas, float))
    pts, wts = prior.points, prior.weights
    if per_row_lam is not None:
        quad = -0.5 * np.einsum("nij,ai,aj->na", np.asarray(per_row_lam, float), pts, pts)
    else:
        quad = -0.5 * np.einsum("ai,ij,aj->a", pts, np.asarray(Lam, float), pts)
    theta = gammas @ pts.T + quad + np.log(wts)  # (N, A)
    m = theta.max(axis=1)
    expt = np.exp(theta - m[:, None])
    s = expt.sum(axis=1)
    log_z = m + np.log(s)
    post = expt / s[:, None]
    f = post @ pts
    second = np.einsum("na,ai,aj->nij", post, pts, pts)
    df = second - f[:, :, None] * f[:, None, :]
    return log_z, f, df


def ridge_denoiser(gamma, Vhat, lam: float, C) -> PriorResult:
    """beta -> infinity ridge denoiser: f = (lam C^-1 + Vhat)^-1 gamma.

    The z field carries the rescaled log-partition density
    gamma' (lam C^-1 + Vhat)^-1 gamma / 2 (the subexponential determinant
    factors drop out of the limit); the state-evolution teacher weighting
    never uses it, the Z* factor always comes from the teacher prior.
    """
    gamma = np.asarray(gamma, float).ravel()
    A = lam * inverse(C) + np.asarray(Vhat, float)
    Ainv = inverse(A)
    cholesky(Ainv)
    f = Ainv @ gamma
    return PriorResult(z=0.5 * gamma @ f, f=f, df=Ainv, log_z=0.5 * gamma @ f)


# ---------------------------------------------------------------------------
# Teacher-weighted expectations for state evolution


def _sqrt_psd(a: np.ndarray) -> np.ndarray:
    return sqrt_spd(eigh_floor(a, 0.0))


def _invsqrt_psd(a: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    a = eigh_floor(a, 0.0)
    w, U = np.linalg.eigh(a)
    w = np.maximum(w, floor * max(1.0, w.max() if w.size else 1.0))
    return (U / np.sqrt(w)) @ U.T


def bayes_prior_update(qhat: np.ndarray, teacher: PriorSpec, rule: GaussHermiteRule):
    """One Bayes prior-side step: (q_new, Psi_w) at conjugate overlap qhat.

    q_new = E_xi[Z*_w f*_w f*_w'] and Psi_w = E_xi[Z*_w ln Z*_w], both at
    (qhat^{1/2} xi, qhat).
    """
    qhat = eigh_floor(qhat, 0.0)
    dim = qhat.shape[0]
    if not teacher.is_atomic:
        Sigma = teacher.covariance
        prec = inverse(Sigma) + qhat
        B = inverse(prec)
        rt = _sqrt_psd(qhat)
        M = rt @ B @ rt
        S = inverse(np.eye(dim) - M)
        q_new = B @ (qhat + qhat @ Sigma @ qhat) @ B
        log_c = -0.5 * (logdet(Sigma) + logdet(prec))
        psi = 0.5 * np.trace(M @ S) + log_c
        return 0.5 * (q_new + q_new.T), psi

    rt = _sqrt_psd(qhat)
    nodes, weights = tensor_nodes(rule, dim)
    pts, wts = teacher.atoms.points, teacher.atoms.weights
    q_new = np.zeros((dim, dim))
    psi = 0.0
    for w_a, p_a in zip(pts, wts):
        gammas = nodes @ rt + qhat @ w_a  # gamma(xi) at xi = u + qhat^{1/2} w_a
        log_z, f, _ = atom_denoiser_batch(gammas, qhat, teacher.atoms)
        q_new += p_a * np.einsum("n,ni,nj->ij", weights, f, f)
        psi += p_a * float(weights @ log_z)
    return 0.5 * (q_new + q_new.T), psi


def erm_prior_update(mhat, qhat, vhat, teacher: PriorSpec, lam: float, C,
                     rule: Optional[GaussHermiteRule] = None):
    """One ERM prior-side step: (m, q, V) from the hat overlaps.

    Teacher weight Z*_w is evaluated at (mhat qhat^{-1/2} xi, mhat qhat^{-1}
    mhat'); the student is the ridge denoiser.  Gaussian teachers reduce to
    closed matrix algebra; atom teachers use the tilted-mixture identity for
    the m-update (q and V close in matrix form for any teacher).
    """
    dim = np.asarray(qhat).shape[0]
    qhat = eigh_floor(qhat, 0.0)
    A = lam * inverse(C) + np.asarray(vhat, float)
    Ainv = inverse(A)
    rt = _sqrt_psd(qhat)
    irt = _invsqrt_psd(qhat)
    # Built from qhat^{-1/2} so the tilted-mixture shifts below match exactly.
    Lam_star = (mhat @ irt) @ (mhat @ irt).T

    if not teacher.is_atomic:
        Sigma = teacher.covariance
        B = inverse(inverse(Sigma) + Lam_star)
        M = irt @ mhat.T @ B @ mhat @ irt
        S = inverse(np.eye(dim) - 0.5 * (M + M.T))
        m_new = B @ mhat @ irt @ S @ rt @ Ainv
        q_new = Ainv @ rt @ S @ rt @ Ainv
        return m_new, 0.5 * (q_new + q_new.T), Ainv

    pts, wts = teacher.atoms.points, teacher.atoms.weights
    # E*[xi xi'] = I + sum_a p_a c_a c_a' with shifts c_a = qhat^{-1/2} mhat' w_a.
    shifts = pts @ mhat @ irt  # row a = c_a'
    S = np.eye(dim) + (shifts * wts[:, None]).T @ shifts
    q_new = Ainv @ rt @ S @ rt @ Ainv
    if rule is None:
        rule = gauss_hermite(40)
    nodes, weights = tensor_nodes(rule, dim)
    m_new = np.zeros((teacher.dim, dim))
    for w_a, p_a, c_a in zip(pts, wts, shifts):
        xi = nodes + c_a
        gammas_star = xi @ irt @ mhat.T
        _, f_star, _ = atom_denoiser_batch(gammas_star, Lam_star, teacher.atoms)
        f_student = xi @ rt @ Ainv
        m_new += p_a * np.einsum("n,ni,nj->ij", weights, f_star, f_student)
    return m_new, 0.5 * (q_new + q_new.T), Ainv
