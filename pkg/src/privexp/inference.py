"""Posterior inference from a noisy release.

The Gibbs samplers alternate between the parameter (exact conjugate update
given a full statistic), the statistic (normal approximation to its sampling
distribution times a Gaussian likelihood for the release) and the per-coordinate
noise variances that represent the Laplace noise as a scale mixture of normals.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .expfam import Family, HyperParams, Multinomial, conjugate_update, sample_posterior_param, sample_prior
from .mechanisms import NoisyRelease
from .truncation import RsCltParams, rs_clt_many, split_intervals

log = logging.getLogger(__name__)

MAX_REJECTIONS = 1000
RESIDUAL_FLOOR = 1e-10


def norm_product(mu1, cov1, mu2, cov2) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the normalised product N(mu1, cov1) N(mu2, cov2).

    The result is (cov1^-1 + cov2^-1)^-1 with mean cov3 (cov1^-1 mu1 + cov2^-1 mu2),
    evaluated in the gain form cov3 = cov1 - K cov1, K = cov1 (cov1 + cov2)^-1,
    which needs one linear solve and stays accurate when one factor is nearly flat.
    """
    mu1 = np.asarray(mu1, dtype=float).reshape(-1)
    mu2 = np.asarray(mu2, dtype=float).reshape(-1)
    d = mu1.size
    cov1 = np.asarray(cov1, dtype=float).reshape(d, d)
    cov2 = np.asarray(cov2, dtype=float).reshape(d, d)
    if d == 1:
        a, b = cov1[0, 0], cov2[0, 0]
        if not (a > 0 and b > 0):
            raise np.linalg.LinAlgError("norm_product needs positive definite covariances")
        k = a / (a + b)
        return np.array([mu1[0] + k * (mu2[0] - mu1[0])]), np.array([[a - k * a]])
    # raises LinAlgError unless both factors are positive definite
    np.linalg.cholesky(cov1)
    np.linalg.cholesky(cov2)
    gain = np.linalg.solve(cov1 + cov2, cov1).T
    cov3 = cov1 - gain @ cov1
    return mu1 + gain @ (mu2 - mu1), 0.5 * (cov3 + cov3.T)


def condition_on_sum(mean, cov, target: float, noise_var: float) -> tuple[np.ndarray, np.ndarray]:
    """Condition N(mean, cov) on observing sum(s) + N(0, noise_var) = target."""
    cov_a = cov.sum(axis=1)
    gain = cov_a / (cov_a.sum() + noise_var)
    new_mean = mean + gain * (target - mean.sum())
    new_cov = cov - np.outer(gain, cov_a)
    return new_mean, 0.5 * (new_cov + new_cov.T)


def update_sigma2(y, s_center, delta: float, epsilon: float, rng) -> np.ndarray:
    """Draw the noise variances given the current residuals y - s.

    1/sigma2_j is inverse Gaussian with mean eps / (delta |y_j - s_j|) and shape
    (eps / delta)^2. Residuals are floored at 1e-10.
    """
    if not (delta > 0 and epsilon > 0):
        raise ValueError("delta and epsilon must be positive")
    resid = np.maximum(np.abs(np.asarray(y, dtype=float) - np.asarray(s_center, dtype=float)), RESIDUAL_FLOOR)
    shape = (epsilon / delta) ** 2
    if resid.size == 1:
        return np.array([1.0 / rngmod.inverse_gaussian_scalar(epsilon / (delta * resid[0]), shape, rng)])
    return 1.0 / rngmod.inverse_gaussian(epsilon / (delta * resid), shape, rng)


@dataclass
class Chain:
    """Per-iteration record of a Gibbs run (burn-in included)."""

    theta: np.ndarray
    s: np.ndarray
    sigma2: np.ndarray
    burnin: int
    s_center: np.ndarray | None = None
    attempts: int = 0
    rejections: int = 0
    exhausted: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def iters(self) -> int:
        return len(self.theta)

    @property
    def samples(self) -> np.ndarray:
        return self.theta[self.burnin :]

    @property
    def rejection_rate(self) -> float:
        return self.rejections / self.attempts if self.attempts else 0.0


class _StatDrawer:
    """Rejection sampler for statistics with bookkeeping."""

    def __init__(self, valid, rng):
        self.valid = valid
        self.rng = rng
        self.attempts = 0
        self.rejections = 0
        self.exhausted = 0

    def draw(self, mean, cov, previous):
        for _ in range(MAX_REJECTIONS):
            self.attempts += 1
            s = rngmod.mvnormal(mean, cov, self.rng)
            if self.valid(s):
                return s
            self.rejections += 1
        self.exhausted += 1
        return previous


def initial_sigma2(release: NoisyRelease) -> np.ndarray:
    # prior mean of the exponential mixing distribution
    return np.full(release.family.release_dim, 2.0 * release.scale**2)


def _check_compatible(release: NoisyRelease, prior: HyperParams):
    if release.family != prior.family:
        raise ValueError(f"release family {release.family} does not match prior family {prior.family}")


def _draw_bounded_stat(family: Family, n: int, y, sigma2, mu, sigma):
    """Conditional mean and covariance of s given theta, sigma2 and the release."""
    d = family.stat_dim
    mean, cov = norm_product(n * mu, n * sigma, y[:d], np.diag(sigma2[:d]))
    if isinstance(family, Multinomial):
        # last released count observes n - sum(s)
        mean, cov = condition_on_sum(mean, cov, n - y[d], sigma2[d])
    return mean, cov


def _residual_fit(family: Family, n: int, s):
    """Noise-free released vector implied by the statistic s."""
    if isinstance(family, Multinomial):
        return np.concatenate([s, [n - s.sum()]])
    return s


def gibbs_bounded(
    release: NoisyRelease,
    prior: HyperParams,
    iters: int,
    burnin: int,
    rng,
    theta0=None,
    fix_theta: bool = False,
) -> Chain:
    """Gibbs sampler for families with bounded statistics.

    ``theta0`` overrides the prior-draw initialisation; ``fix_theta`` keeps the
    parameter at ``theta0`` throughout (used to check the statistic updates in
    isolation).
    """
    _check_compatible(release, prior)
    family, n = release.family, release.n
    if not family.bounded:
        raise ValueError(f"{family.name} needs the truncated sampler")
    if not iters > burnin >= 0:
        raise ValueError("need iters > burnin >= 0")
    y = release.y
    delta, eps = release.delta_s, release.epsilon
    d = family.stat_dim

    theta = sample_prior(prior, rng) if theta0 is None else theta0
    s = family.clamp_stats(y[:d], n)
    sigma2 = initial_sigma2(release)
    drawer = _StatDrawer(lambda v: family.valid_stats(v, n), rng)

    theta_tr = np.empty((iters,) + np.shape(theta))
    s_tr = np.empty((iters, d))
    sig_tr = np.empty((iters, release.family.release_dim))
    for t in range(iters):
        if not fix_theta:
            theta = sample_posterior_param(conjugate_update(prior, s, n), rng)
        mu, sigma = family.moments(theta)
        mean, cov = _draw_bounded_stat(family, n, y, sigma2, mu, sigma)
        s = drawer.draw(mean, cov, s)
        sigma2 = update_sigma2(y, _residual_fit(family, n, s), delta, eps, rng)
        theta_tr[t] = theta
        s_tr[t] = s
        sig_tr[t] = sigma2
    chain = Chain(theta_tr, s_tr, sig_tr, burnin, attempts=drawer.attempts, rejections=drawer.rejections, exhausted=drawer.exhausted)
    if chain.exhausted:
        log.warning("rejection budget exhausted %d times", chain.exhausted)
    return chain


def _sum_params(parts: list[RsCltParams]) -> tuple[np.ndarray, np.ndarray]:
    return sum(p.m for p in parts), sum(p.V for p in parts)


def _condition_center(center: RsCltParams, y, sigma2) -> RsCltParams:
    if center.q == 0.0:
        return center
    m, V = norm_product(center.m, center.V, y, np.diag(sigma2))
    return RsCltParams(m, V, center.q)


def gibbs_truncated(
    release: NoisyRelease,
    prior: HyperParams,
    iters: int,
    burnin: int,
    rng,
    theta0=None,
    center_draw: str = "conditional",
) -> Chain:
    """Gibbs sampler for a truncated release of an unbounded univariate family.

    The full statistic is the sum of the lower, centre and upper interval
    statistics; only the centre one is released. After the parameter update the
    centre statistic is redrawn at the new parameter and drives the noise
    variance update. ``center_draw="conditional"`` redraws it from its full
    conditional (given the release and noise variances);
    ``center_draw="marginal"`` draws it from the random-sum approximation
    alone.
    """
    _check_compatible(release, prior)
    family, n = release.family, release.n
    if release.bounds is None:
        raise ValueError("truncated sampler needs a release with bounds")
    if center_draw not in ("conditional", "marginal"):
        raise ValueError(f"unknown center_draw {center_draw!r}")
    if not iters > burnin >= 0:
        raise ValueError("need iters > burnin >= 0")
    y = release.y
    delta, eps = release.delta_s, release.epsilon
    intervals = split_intervals(family, release.bounds.v, release.bounds.w)
    theta = sample_prior(prior, rng) if theta0 is None else theta0
    s_c = np.maximum(y, 0.0)
    sigma2 = initial_sigma2(release)
    s = family.clamp_stats(s_c, n)
    full = _StatDrawer(lambda v: family.valid_stats(v, n), rng)
    part = _StatDrawer(lambda v: v[0] >= 0.0, rng)

    theta_tr = np.empty(iters)
    s_tr = np.empty((iters, 1))
    sc_tr = np.empty((iters, 1))
    sig_tr = np.empty((iters, 1))
    lo, c, up = rs_clt_many(family, theta, intervals, n)
    for t in range(iters):
        mean, cov = _sum_params([lo, _condition_center(c, y, sigma2), up])
        s = full.draw(mean, cov, s)
        theta = sample_posterior_param(conjugate_update(prior, s, n), rng)
        # all three pieces at the new parameter; lo/up are reused next iteration
        lo, c, up = rs_clt_many(family, theta, intervals, n)
        c_draw = _condition_center(c, y, sigma2) if center_draw == "conditional" else c
        s_c = part.draw(c_draw.m, c_draw.V, s_c)
        sigma2 = update_sigma2(y, s_c, delta, eps, rng)
        theta_tr[t] = theta
        s_tr[t] = s
        sc_tr[t] = s_c
        sig_tr[t] = sigma2
    chain = Chain(
        theta_tr,
        s_tr,
        sig_tr,
        burnin,
        s_center=sc_tr,
        attempts=full.attempts + part.attempts,
        rejections=full.rejections + part.rejections,
        exhausted=full.exhausted + part.exhausted,
    )
    if chain.exhausted:
        log.warning("rejection budget exhausted %d times", chain.exhausted)
    return chain


def run_gibbs(release: NoisyRelease, prior: HyperParams, iters: int, burnin: int, rng, **kwargs) -> Chain:
    if release.family.bounded:
        return gibbs_bounded(release, prior, iters, burnin, rng, **kwargs)
    return gibbs_truncated(release, prior, iters, burnin, rng, **kwargs)


def naive_update(prior: HyperParams, y, n: int) -> HyperParams:
    """Conjugate update treating a noisy statistic as exact, after projection.

    For the multinomial all ``k`` noisy counts are used, negatives set to zero.
    """
    family = prior.family
    y = np.asarray(y, dtype=float).reshape(-1)
    if isinstance(family, Multinomial):
        return HyperParams(family, tuple(np.array(prior.params) + np.clip(y, 0.0, None)))
    return conjugate_update(prior, family.project_stats(y, n), n)


def naive_posterior(release: NoisyRelease, prior: HyperParams) -> HyperParams:
    _check_compatible(release, prior)
    return naive_update(prior, release.y, release.n)
