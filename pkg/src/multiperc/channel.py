"""Output-channel quantities for the argmax teacher and for ERM losses.

The Bayes-optimal channel reduces to bivariate (or univariate) Gaussian
orthant probabilities after mapping each class region through a linear map;
partition values, score vectors and score Jacobians all come from closed
forms of the orthant CDF.  The ERM channel is the beta -> infinity limit:
proximal operators of the loss, with cross-entropy solved by a damped Newton
iteration and the square loss in closed form.

Numerical policy: orthant CDFs are evaluated with Owen's T function (machine
precision in the bulk) and switch to a log-domain Laplace-windowed quadrature
in the tails, where the Owen decomposition cancels catastrophically.  All
score computations go through log-space exponent differences so that ratios
like (dP/dmu)/P stay accurate down to P ~ 1e-300.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np
from scipy.special import log_ndtr, ndtr, owens_t

from .reduction import ClassRegionMap
from .smallmat import cholesky, inverse

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_TINY_Z = 1e-300
_RHO_DEGENERATE = 1.0 - 1e-12

# Owen-path result is kept only when it clears this relative-cancellation
# guard; see _log_bvn_cdf.
_OWEN_REL_FLOOR = 1e-10


class ChannelError(RuntimeError):
    pass


class ChannelTailError(ChannelError):
    """Partition value underflowed; carries the log-value estimate."""

    def __init__(self, log_z: float):
        super().__init__(f"channel partition underflow, ln Z ~ {log_z:.3e}")
        self.log_z = log_z


# ---------------------------------------------------------------------------
# Bivariate normal CDF


def _sgn(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, np.where(x < 0, -1.0, 0.0))


def bvn_cdf(h, k, rho):
    """P(X <= h, Y <= k) for standard bivariate normal with correlation rho.

    Owen's T decomposition with explicit handling of the h = 0 / k = 0 rays
    and of degenerate |rho| -> 1.  Accurate to ~1e-15 absolute; relative
    accuracy degrades in deep tails (use _log_bvn_cdf there).
    """
    h, k, rho = np.broadcast_arrays(
        np.asarray(h, float), np.asarray(k, float), np.asarray(rho, float)
    )
    out = np.empty(h.shape)

    deg_pos = rho >= _RHO_DEGENERATE
    deg_neg = rho <= -_RHO_DEGENERATE
    core = ~(deg_pos | deg_neg)

    np.copyto(out, ndtr(np.minimum(h, k)), where=deg_pos)
    np.copyto(out, np.clip(ndtr(h) + ndtr(k) - 1.0, 0.0, 1.0), where=deg_neg)

    if np.any(core):
        hc, kc, rc = h[core], k[core], rho[core]
        den = np.sqrt(1.0 - rc * rc)
        zero_h = hc == 0.0
        zero_k = kc == 0.0
        both = zero_h & zero_k

        # Owen arguments; safe denominators for the rays handled below.
        hs = np.where(zero_h, 1.0, hc)
        ks = np.where(zero_k, 1.0, kc)
        t_h = owens_t(hc, (kc - rc * hc) / (hs * den))
        t_k = owens_t(kc, (hc - rc * kc) / (ks * den))
        t_h = np.where(zero_h, 0.25 * _sgn(kc), t_h)
        t_k = np.where(zero_k, 0.25 * _sgn(hc), t_k)

        beta = np.where(
            hc * kc < 0, 0.5, np.where((hc * kc == 0) & ((hc < 0) | (kc < 0)), 0.5, 0.0)
        )
        val = 0.5 * (ndtr(hc) + ndtr(kc)) - t_h - t_k - beta
        val = np.where(both, 0.25 + np.arcsin(rc) / (2.0 * math.pi), val)
        out[core] = np.clip(val, 0.0, 1.0)
    return out


_LEGGAUSS_CACHE: dict = {}


def _leggauss(n: int):
    if n not in _LEGGAUSS_CACHE:
        _LEGGAUSS_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _LEGGAUSS_CACHE[n]


def _gl_panel(a, b, n):
    """Gauss-Legendre nodes/weights on per-element intervals [a, b]."""
    x, w = _leggauss(n)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    return mid[..., None] + half[..., None] * x, half[..., None] * w


def _mills(u):
    """phi(u)/Phi(u), stable for u -> -inf (grows like |u|)."""
    u = np.asarray(u, float)
    # phi(u)/Phi(u) = sqrt(2/pi) / erfcx(-u/sqrt(2))
    from scipy.special import erfcx

    return math.sqrt(2.0 / math.pi) / erfcx(-u / math.sqrt(2.0))


def _log_bvn_quad(h, k, rho, n_panels: int = 12, n_gl: int = 20):
    """ln P(X <= h, Y <= k) by log-domain quadrature of the conditional form.

    P = int_{-inf}^{h} phi(t) Phi((k - rho t)/sqrt(1-rho^2)) dt.  The log
    integrand is strictly concave with curvature <= -1, so a width-13 window
    left of min(h, t*) plus a mirrored window up to h captures everything to
    below 1e-60 relative truncation.
    """
    h = np.atleast_1d(np.asarray(h, float))
    k = np.atleast_1d(np.asarray(k, float))
    rho = np.clip(np.atleast_1d(np.asarray(rho, float)), -0.9995, 0.9995)
    den = np.sqrt(1.0 - rho * rho)

    def gprime(t):
        u = (k - rho * t) / den
        return -t + (-rho / den) * _mills(u)

    # Bisection for the unconstrained maximizer of the concave log-integrand.
    lo = np.full_like(h, -1e4)
    hi = np.full_like(h, 1e4)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        pos = gprime(mid) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    t_star = 0.5 * (lo + hi)

    c = np.minimum(t_star, h)
    width = 13.0

    def log_integrand(t):
        u = (k[..., None] - rho[..., None] * t) / den[..., None]
        return -0.5 * t * t - _LOG_SQRT_2PI + log_ndtr(u)

    x_gl, w_gl = _leggauss(n_gl)
    edges = np.linspace(0.0, 1.0, n_panels + 1)
    # All sub-panel nodes in one (n_panels * n_gl,) template on [0, 1].
    t01 = (edges[:-1, None] + np.diff(edges)[:, None] * 0.5 * (x_gl + 1.0)).ravel()
    w01 = (0.5 * np.diff(edges)[:, None] * w_gl).ravel()

    def panel_logsum(a, b):
        # Composite GL resolving features down to ~ width / (n_panels * n_gl).
        span = (b - a)[..., None]
        t = a[..., None] + span * t01
        total = log_integrand(t) + np.log(np.maximum(span * w01, 1e-320))
        m = total.max(axis=-1)
        return m + np.log(np.sum(np.exp(total - m[..., None]), axis=-1))

    left = panel_logsum(c - width, c)
    right_hi = np.minimum(h, c + width)
    have_right = right_hi > c
    right = np.where(
        have_right, panel_logsum(c, np.where(have_right, right_hi, c + 1.0)), -np.inf
    )
    stacked = np.stack([left, right])
    m = stacked.max(axis=0)
    return m + np.log(np.exp(stacked[0] - m) + np.exp(stacked[1] - m))


def _log_bvn_cdf(h, k, rho, skip_below: float = -640.0):
    """ln Phi_2(h, k; rho), switching to quadrature where Owen cancels.

    The Owen decomposition differences terms of size ~ max(Phi(h), Phi(k)),
    so its absolute error is ~1e-16 * that scale; keep it only when the
    result is comfortably above that noise floor.  Entries whose upper bound
    ln Phi(min(h, k)) already falls below `skip_below` keep that bound
    instead of paying for the quadrature; callers that only need the value
    where it carries mass (the state-evolution accumulators) raise the cutoff.
    """
    h, k, rho = np.broadcast_arrays(
        np.asarray(h, float), np.asarray(k, float), np.asarray(rho, float)
    )
    shape = h.shape
    h, k, rho = np.atleast_1d(h), np.atleast_1d(k), np.atleast_1d(rho)
    upper = log_ndtr(np.minimum(h, k))
    out = upper.copy()  # valid upper bound; kept for entries below the cutoff
    live = upper >= skip_below
    if np.any(live):
        hl, kl, rl = h[live], k[live], rho[live]
        p = bvn_cdf(hl, kl, rl)
        scale = np.maximum(ndtr(hl), ndtr(kl))
        val = np.log(np.maximum(p, 1e-320))
        bad = (p < _OWEN_REL_FLOOR * scale) | (p < 1e-300)
        if np.any(bad):
            deg_pos = rl >= _RHO_DEGENERATE
            deg_neg = rl <= -_RHO_DEGENERATE
            fix = bad & ~deg_pos & ~deg_neg
            if np.any(fix):
                val[fix] = _log_bvn_quad(hl[fix], kl[fix], rl[fix])
            val[bad & deg_pos] = upper[live][bad & deg_pos]
            val[bad & deg_neg] = -np.inf
        out[live] = val
    return out.reshape(shape)


def gaussian_orthant(mu, Sigma) -> float:
    """P(g + mu >= 0 componentwise) for g ~ N(0, Sigma), Sigma SPD 2x2."""
    mu = np.asarray(mu, float).ravel()
    Sigma = np.asarray(Sigma, float)
    if mu.shape != (2,) or Sigma.shape != (2, 2):
        raise ValueError("gaussian_orthant expects a 2-vector and a 2x2 covariance")
    cholesky(Sigma)  # SPD validation
    s1, s2 = math.sqrt(Sigma[0, 0]), math.sqrt(Sigma[1, 1])
    rho = Sigma[0, 1] / (s1 * s2)
    return float(bvn_cdf(mu[0] / s1, mu[1] / s2, rho))


# ---------------------------------------------------------------------------
# Orthant score statistics (log partition, gradient, Hessian)


def _orthant_stats_1d(mu, s):
    """(lnP, grad, hess) of ln P(g + mu >= 0), g ~ N(0, s^2), w.r.t. mu."""
    h = mu / s
    ln_p = log_ndtr(h)
    ln_phi = -0.5 * h * h - _LOG_SQRT_2PI
    g = np.exp(ln_phi - ln_p) / s
    e2 = -(h / (s * s)) * np.exp(ln_phi - ln_p)
    hess = e2 - g * g
    return ln_p, g[..., None], hess[..., None, None]


def _orthant_stats_2d(mu1, mu2, s1, s2, rho, tail_skip: float = -640.0):
    """(lnP, grad (...,2), hess (...,2,2)) of ln P(g + mu >= 0) w.r.t. mu.

    All pieces are assembled from exponent differences relative to lnP so
    the scores stay finite and accurate deep into the tails.
    """
    h = mu1 / s1
    k = mu2 / s2
    rho = np.clip(rho, -_RHO_DEGENERATE, _RHO_DEGENERATE)
    den = np.sqrt(1.0 - rho * rho)
    ln_p = _log_bvn_cdf(h, k, rho, skip_below=tail_skip)

    u1 = (k - rho * h) / den
    u2 = (h - rho * k) / den
    ln_phi_h = -0.5 * h * h - _LOG_SQRT_2PI
    ln_phi_k = -0.5 * k * k - _LOG_SQRT_2PI

    g1 = np.exp(ln_phi_h + log_ndtr(u1) - ln_p) / s1
    g2 = np.exp(ln_phi_k + log_ndtr(u2) - ln_p) / s2

    ln_phi_u1 = -0.5 * u1 * u1 - _LOG_SQRT_2PI
    ln_phi_u2 = -0.5 * u2 * u2 - _LOG_SQRT_2PI
    e11 = -(h * np.exp(ln_phi_h + log_ndtr(u1) - ln_p) + (rho / den) * np.exp(ln_phi_h + ln_phi_u1 - ln_p)) / (s1 * s1)
    e22 = -(k * np.exp(ln_phi_k + log_ndtr(u2) - ln_p) + (rho / den) * np.exp(ln_phi_k + ln_phi_u2 - ln_p)) / (s2 * s2)
    ln_phi2 = -(h * h - 2.0 * rho * h * k + k * k) / (2.0 * den * den) - math.log(2.0 * math.pi) - np.log(den)
    e12 = np.exp(ln_phi2 - ln_p) / (s1 * s2)

    grad = np.stack([g1, g2], axis=-1)
    h11 = e11 - g1 * g1
    h12 = e12 - g1 * g2
    h22 = e22 - g2 * g2
    hess = np.stack(
        [np.stack([h11, h12], axis=-1), np.stack([h12, h22], axis=-1)], axis=-2
    )
    return ln_p, grad, hess


def orthant_score(mu: np.ndarray, Sigma: np.ndarray, tail_skip: float = -640.0):
    """Batched (lnP, grad, hess) of ln P(g + mu >= 0) for fixed covariance.

    mu has shape (..., r) with r in {1, 2}; Sigma is r x r SPD.
    """
    mu = np.asarray(mu, float)
    r = mu.shape[-1]
    if r == 1:
        s = math.sqrt(float(Sigma[0, 0]))
        return _orthant_stats_1d(mu[..., 0], s)
    s1 = math.sqrt(float(Sigma[0, 0]))
    s2 = math.sqrt(float(Sigma[1, 1]))
    rho = float(Sigma[0, 1]) / (s1 * s2)
    return _orthant_stats_2d(mu[..., 0], mu[..., 1], s1, s2, rho, tail_skip=tail_skip)


def orthant_score_batched_cov(mu: np.ndarray, Sigma: np.ndarray, tail_skip: float = -640.0):
    """Like orthant_score but with one covariance per row (AMP usage)."""
    mu = np.asarray(mu, float)
    r = mu.shape[-1]
    if r == 1:
        s = np.sqrt(Sigma[..., 0, 0])
        return _orthant_stats_1d(mu[..., 0], s)
    s1 = np.sqrt(Sigma[..., 0, 0])
    s2 = np.sqrt(Sigma[..., 1, 1])
    rho = Sigma[..., 0, 1] / (s1 * s2)
    return _orthant_stats_2d(mu[..., 0], mu[..., 1], s1, s2, rho, tail_skip=tail_skip)


# ---------------------------------------------------------------------------
# Bayes channel through class-region maps


@dataclass(frozen=True)
class ChannelQuery:
    y: int
    omega: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        omega = np.asarray(self.omega, float).ravel()
        V = np.asarray(self.V, float)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "V", V)
        if not np.all(np.isfinite(omega)):
            raise ValueError("omega must be finite")
        cholesky(V)


@dataclass(frozen=True)
class ChannelResult:
    z: float
    g: np.ndarray
    dg: np.ndarray
    log_z: float = None

    def __post_init__(self):
        if self.log_z is None:
            object.__setattr__(self, "log_z", math.log(self.z) if self.z > 0 else -math.inf)


@dataclass(frozen=True)
class LossSpec:
    kind: str  # "cross_entropy" | "square"
    k: int

    def __post_init__(self):
        if self.kind not in ("cross_entropy", "square"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.k < 2:
            raise ValueError("k must be >= 2")


def region_channel_batch(A: np.ndarray, omegas: np.ndarray, V: np.ndarray, tail_skip: float = -640.0):
    """(lnZ, g, dg) of the argmax channel for one class map A and fixed V.

    Z(omega) = P(g + A omega >= 0), g ~ N(0, A V A^T); the chain rule maps
    the orthant scores back through A.
    """
    A = np.asarray(A, float)
    Sigma = A @ V @ A.T
    mu = omegas @ A.T
    ln_p, grad, hess = orthant_score(mu, Sigma, tail_skip=tail_skip)
    g = grad @ A
    dg = np.einsum("ri,...rs,sj->...ij", A, hess, A)
    return ln_p, g, dg


def zout_bayes(query: ChannelQuery, regions: ClassRegionMap) -> float:
    """Probability that the argmax channel emits class y at N(omega, V)."""
    A = regions.maps[query.y - 1]
    if A.shape[0] == 1:
        return float(ndtr((A @ query.omega)[0] / math.sqrt(float((A @ query.V @ A.T)[0, 0]))))
    return gaussian_orthant(A @ query.omega, A @ query.V @ A.T)


def fout_bayes(query: ChannelQuery, regions: ClassRegionMap) -> ChannelResult:
    """Partition, score and score Jacobian of the Bayes argmax channel.

    Raises ChannelTailError (carrying the log-partition estimate) when the
    partition value underflows 1e-300: for a finite-size algorithm that marks
    a diverged state, not a value to clamp.
    """
    A = regions.maps[query.y - 1]
    ln_z, g, dg = region_channel_batch(A, query.omega[None, :], query.V)
    ln_z = float(ln_z[0])
    if ln_z < math.log(_TINY_Z):
        raise ChannelTailError(ln_z)
    return ChannelResult(z=math.exp(ln_z), g=g[0], dg=dg[0], log_z=ln_z)


def difference_maps(k: int):
    """Full-coordinate maps D_y with rows e_y - e_l, l != y.

    argmax(z) = y iff D_y z > 0 componentwise; used by the square-loss state
    evolution which runs in all k coordinates.
    """
    maps = []
    for y in range(k):
        D = np.zeros((k - 1, k))
        r = 0
        for l in range(k):
            if l == y:
                continue
            D[r, y] = 1.0
            D[r, l] = -1.0
            r += 1
        maps.append(D)
    return maps


# ---------------------------------------------------------------------------
# ERM channel: losses and proximal operators


def cross_entropy_reduced(z, y: int, k: int):
    """Reduced cross-entropy: value, gradient and Hessian at z in R^(k-1).

    The softmax is shift invariant, so the loss depends only on logit
    differences; the k-th logit is pinned to zero.  Batched over the leading
    axes of z.
    """
    z = np.asarray(z, float)
    scalar = z.ndim == 1
    zb = np.atleast_2d(z)
    lse = np.logaddexp.reduce(np.concatenate([zb, np.zeros((zb.shape[0], 1))], axis=1), axis=1)
    value = lse - (zb[:, y - 1] if y < k else 0.0)
    p = np.exp(zb - lse[:, None])
    grad = p.copy()
    if y < k:
        grad[:, y - 1] -= 1.0
    hess = -p[:, :, None] * p[:, None, :]
    idx = np.arange(k - 1)
    hess[:, idx, idx] += p
    if scalar:
        return float(value[0]), grad[0], hess[0]
    return value, grad, hess


def _square_loss_terms(z, y: int, k: int):
    target = np.zeros(k)
    target[y - 1] = 1.0
    diff = np.atleast_2d(z) - target
    value = 0.5 * np.sum(diff * diff, axis=1)
    return value, diff, np.broadcast_to(np.eye(k), (diff.shape[0], k, k))


def _loss_terms(z, y: int, loss: LossSpec):
    if loss.kind == "square":
        return _square_loss_terms(z, y, loss.k)
    return cross_entropy_reduced(np.atleast_2d(z), y, loss.k)


def prox_newton_batch(y: int, omegas: np.ndarray, V: np.ndarray, loss: LossSpec,
                      tol: float = 1e-12, max_iter: int = 100):
    """Batched proximal points of a convex loss under the V^{-1} metric.

    Damped Newton with halving line search from z = omega; for the strictly
    convex losses here this converges globally.  Returns (z_star, jac) with
    jac = (V^{-1} + hess)^{-1} V^{-1} = d z*/d omega.
    """
    omegas = np.atleast_2d(np.asarray(omegas, float))
    n, dim = omegas.shape
    Vinv = np.linalg.inv(V)
    # Gradient tolerance is scale-aware: with tiny V the V^{-1}(z - omega)
    # term has magnitude ~ ||V^{-1}||, and 1e-12 absolute is below float
    # cancellation noise.
    gtol = tol * max(1.0, float(np.abs(Vinv).max()))

    z = omegas.copy()

    def objective(zv):
        val, _, _ = _loss_terms(zv, y, loss)
        d = zv - omegas
        return val + 0.5 * np.einsum("ni,ij,nj->n", d, Vinv, d)

    fval = objective(z)
    for _ in range(max_iter):
        _, grad_l, hess_l = _loss_terms(z, y, loss)
        grad = (z - omegas) @ Vinv + grad_l
        gnorm = np.abs(grad).max(axis=1)
        active = gnorm > gtol
        if not active.any():
            break
        Hfull = hess_l + Vinv
        step = np.linalg.solve(Hfull[active], -grad[active][..., None])[..., 0]
        # Halving line search on the strictly convex objective; near the
        # optimum objective differences sit at rounding level, so plain
        # Newton steps take over (they contract there).
        t = np.ones(active.sum())
        z_act = z[active]
        f_act = fval[active]
        descent = np.einsum("ni,ni->n", grad[active], step)
        searching = gnorm[active] > 1e-6
        for _ in range(60):
            trial = z_act + t[:, None] * step
            f_trial = objective_subset(trial, omegas[active], y, loss, Vinv)
            ok = ~searching | (f_trial <= f_act + 1e-4 * t * descent)
            if ok.all():
                break
            t = np.where(ok, t, 0.5 * t)
        z_new = z_act + t[:, None] * step
        z[active] = z_new
        fval[active] = objective_subset(z_new, omegas[active], y, loss, Vinv)
    else:
        _, grad_l, _ = _loss_terms(z, y, loss)
        grad = (z - omegas) @ Vinv + grad_l
        if np.abs(grad).max() > gtol * 10:
            raise ChannelError(
                f"prox Newton failed to converge; residual {np.abs(grad).max():.3e}"
            )

    _, _, hess_l = _loss_terms(z, y, loss)
    jac = np.linalg.solve(hess_l + Vinv, np.broadcast_to(Vinv, hess_l.shape).copy())
    return z, jac


def objective_subset(zv, om, y, loss, Vinv):
    val, _, _ = _loss_terms(zv, y, loss)
    d = zv - om
    return val + 0.5 * np.einsum("ni,ij,nj->n", d, Vinv, d)


def prox_loss(y: int, omega: np.ndarray, V: np.ndarray, loss: LossSpec):
    """Proximal point argmin_z 0.5 (z-w)' V^{-1} (z-w) + loss(z, y) and its Jacobian."""
    omega = np.asarray(omega, float).ravel()
    V = np.asarray(V, float)
    cholesky(V)
    if loss.kind == "square":
        k = loss.k
        if omega.shape != (k,) or V.shape != (k, k):
            raise ValueError("square loss runs in full k coordinates")
        target = np.zeros(k)
        target[y - 1] = 1.0
        jac = inverse(np.eye(k) + V)
        return jac @ (omega + V @ target), jac
    z, jac = prox_newton_batch(y, omega[None, :], V, loss)
    return z[0], jac[0]


def fout_erm(y: int, omega: np.ndarray, V: np.ndarray, loss: LossSpec) -> ChannelResult:
    """ERM channel score f = V^{-1}(prox - omega) with Jacobian and Moreau value.

    The score is evaluated through the stationarity identity
    V^{-1}(prox - omega) = -grad loss(prox), which stays accurate when V is
    nearly singular; the Jacobian uses dg = -(V + hess^{-1})^{-1} for
    cross-entropy and -(I + V)^{-1} for the square loss.
    """
    omega = np.asarray(omega, float).ravel()
    V = np.asarray(V, float)
    z_star, _ = prox_loss(y, omega, V, loss)
    val, grad_l, hess_l = _loss_terms(z_star[None, :], y, loss)
    g = -grad_l[0]
    if loss.kind == "square":
        dg = -inverse(np.eye(loss.k) + V)
    else:
        H = hess_l[0]
        dg = -np.linalg.solve(np.eye(H.shape[0]) + H @ V, H)
        dg = 0.5 * (dg + dg.T)
    d = z_star - omega
    moreau = float(val[0] + 0.5 * d @ np.linalg.solve(V, d))
    return ChannelResult(z=moreau, g=g, dg=dg, log_z=moreau)


def erm_channel_batch(y: int, omegas: np.ndarray, V: np.ndarray, loss: LossSpec):
    """Batched (g, dg, moreau) of the ERM channel at fixed V."""
    omegas = np.atleast_2d(omegas)
    if loss.kind == "square":
        k = loss.k
        target = np.zeros(k)
        target[y - 1] = 1.0
        B = np.linalg.inv(np.eye(k) + V)
        g = (target - omegas) @ B.T
        dg = np.broadcast_to(-B, (omegas.shape[0], k, k))
        z = omegas @ B.T + (V @ target) @ B.T
        d = z - omegas
        val, _, _ = _loss_terms(z, y, loss)
        moreau = val + 0.5 * np.einsum("ni,ij,nj->n", d, np.linalg.inv(V), d)
        return g, dg, moreau
    z, _ = prox_newton_batch(y, omegas, V, loss, tol=1e-12)
    val, grad_l, hess_l = _loss_terms(z, y, loss)
    g = -grad_l
    # dg = -(V + H^{-1})^{-1} written inverse-free: H saturates to singular
    # when the softmax pins to a corner, but I + H V never does.
    dim = omegas.shape[1]
    dg = -np.linalg.solve(np.eye(dim) + hess_l @ V, hess_l)
    dg = 0.5 * (dg + np.swapaxes(dg, -1, -2))
    d = z - omegas
    Vinv = np.linalg.inv(V)
    moreau = val + 0.5 * np.einsum("ni,ij,nj->n", d, Vinv, d)
    return g, dg, moreau
