"""Exponential families with conjugate priors.

Three families ship: Bernoulli (beta prior), multinomial over ``k`` categories
(Dirichlet prior) and exponential (gamma prior). Each family knows its
sufficient statistic, natural parameterisation, log-partition function and,
for univariate families, its CDF. Log-partition and CDF are written against
:mod:`privexp.autodiff` so that means and covariances of the sufficient
statistic come from differentiating them.

The multinomial statistic is the vector of the first ``k - 1`` category counts
(the last one is implied by ``n``), which keeps its covariance full rank.

Parameter conventions: ``theta`` is a float for the univariate families (the
success probability, or the exponential rate) and a length-``k`` probability
vector for the multinomial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from . import autodiff as ad
from . import rng as rngmod
from .errors import (
    ConfigError,
    DegenerateIntervalError,
    DomainError,
    InvalidStatsError,
    SupportError,
    UnsupportedOperationError,
)

# Parameter draws are clamped away from the boundary so eta(theta) stays finite.
THETA_EPS = 1e-12


@dataclass(frozen=True)
class Family:
    """Base class; concrete families override the hooks below."""

    name: ClassVar[str] = ""
    bounded: ClassVar[bool] = True
    univariate: ClassVar[bool] = True
    prior_name: ClassVar[str] = ""

    @property
    def stat_dim(self) -> int:
        return 1

    @property
    def release_dim(self) -> int:
        """Length of the publicly released statistic vector."""
        return self.stat_dim

    # -- data -------------------------------------------------------------
    def check_support(self, values) -> np.ndarray:
        raise NotImplementedError

    def suff_stats(self, values) -> np.ndarray:
        """Sum of t(x) over the records, as a float vector of length stat_dim."""
        raise NotImplementedError

    def release_stats(self, values) -> np.ndarray:
        """The statistic vector the release mechanism perturbs."""
        return self.suff_stats(values)

    def sample_data(self, theta, n: int, rng) -> np.ndarray:
        raise NotImplementedError

    # -- parameters -------------------------------------------------------
    def check_theta(self, theta):
        raise NotImplementedError

    def natural_params(self, theta) -> np.ndarray:
        raise NotImplementedError

    def log_partition(self, eta):
        """A(eta) for a sequence of floats or duals."""
        raise NotImplementedError

    def moments(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of t(x) from the derivatives of A at eta(theta)."""
        _, mu, sigma = ad.grad_hess(self.log_partition, self.natural_params(theta))
        return mu, sigma

    def cdf(self, x: float, eta):
        raise UnsupportedOperationError(f"{self.name} has no scalar CDF")

    def log_interval_mass(self, eta, v: float, w: float):
        """log(F(w; eta) - F(v; eta)), dual-aware. Families may override for accuracy."""
        upper = 1.0 if w == math.inf else self.cdf(w, eta)
        lower = 0.0 if v == -math.inf else self.cdf(v, eta)
        mass = upper - lower
        if ad.value_of(mass) <= 0.0:
            raise DegenerateIntervalError(f"interval [{v}, {w}] has no mass")
        return ad.log(mass)

    def support(self) -> tuple[float, float]:
        raise UnsupportedOperationError(f"{self.name} is not univariate")

    def stat_extrema(self, a: float, b: float) -> list[tuple[float, float]]:
        """Per-coordinate (min, max) of t over [a, b]; t is monotone for shipped families."""
        raise UnsupportedOperationError(f"{self.name} does not support truncation")

    def quantile(self, theta, p: float) -> float:
        raise UnsupportedOperationError(f"{self.name} has no quantile function")

    def first_param(self, theta) -> float:
        """Scalar summary of theta used for calibration and utility."""
        return float(theta)

    def valid_stats(self, s, n: int) -> bool:
        raise NotImplementedError

    def project_stats(self, s, n: int) -> np.ndarray:
        """Nearest point of the closed valid statistic region (naive baseline)."""
        raise NotImplementedError

    def clamp_stats(self, s, n: int) -> np.ndarray:
        """Feasible starting statistic for a chain."""
        return self.project_stats(s, n)

    # -- conjugate prior --------------------------------------------------
    def prior_from_dict(self, spec: dict) -> "HyperParams":
        raise NotImplementedError

    def posterior_params(self, params: np.ndarray, s, n) -> np.ndarray:
        raise NotImplementedError

    def to_lambda(self, params: np.ndarray) -> tuple[np.ndarray, float]:
        raise NotImplementedError

    def from_lambda(self, lambda1, lambda2: float) -> np.ndarray:
        raise NotImplementedError

    def sample_param(self, params: np.ndarray, rng):
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"family": self.name}


@dataclass(frozen=True)
class Bernoulli(Family):
    name: ClassVar[str] = "bernoulli"
    prior_name: ClassVar[str] = "beta"

    def check_support(self, values):
        values = np.asarray(values)
        if values.ndim != 1 or not np.all((values == 0) | (values == 1)):
            raise SupportError("bernoulli data must be a vector of 0/1 values")
        return values.astype(np.int64)

    def suff_stats(self, values):
        return np.array([float(np.sum(self.check_support(values)))])

    def sample_data(self, theta, n, rng):
        theta = self.check_theta(theta)
        return (rng.random(n) < theta).astype(np.int64)

    def check_theta(self, theta):
        theta = float(np.squeeze(theta))
        if not 0.0 < theta < 1.0:
            raise DomainError(f"bernoulli parameter {theta} outside (0, 1)")
        return theta

    def natural_params(self, theta):
        theta = self.check_theta(theta)
        return np.array([math.log(theta) - math.log1p(-theta)])

    def log_partition(self, eta):
        e = eta[0]
        if ad.value_of(e) > 0:
            return e + ad.log1p(ad.exp(-e))
        return ad.log1p(ad.exp(e))

    def cdf(self, x, eta):
        if x < 0:
            return 0.0
        if x >= 1:
            return 1.0
        return 1.0 / (1.0 + ad.exp(eta[0]))

    def support(self):
        return (0.0, 1.0)

    def stat_extrema(self, a, b):
        return [(a, b)]

    def valid_stats(self, s, n):
        s = float(np.squeeze(s))
        return 0.0 <= s <= n

    def project_stats(self, s, n):
        return np.clip(np.asarray(s, dtype=float).reshape(1), 0.0, float(n))

    def prior_from_dict(self, spec):
        try:
            return HyperParams(self, (float(spec["alpha"]), float(spec["beta"])))
        except KeyError as exc:
            raise ConfigError(f"beta prior needs field {exc.args[0]!r}") from None

    def posterior_params(self, params, s, n):
        s = float(np.squeeze(s))
        return np.array([params[0] + s, params[1] + n - s])

    def to_lambda(self, params):
        return np.array([params[0]]), float(params[0] + params[1])

    def from_lambda(self, lambda1, lambda2):
        l1 = float(np.squeeze(lambda1))
        return np.array([l1, lambda2 - l1])

    def sample_param(self, params, rng):
        return min(max(rng.beta(params[0], params[1]), THETA_EPS), 1.0 - THETA_EPS)


@dataclass(frozen=True)
class Multinomial(Family):
    k: int = 3

    name: ClassVar[str] = "multinomial"
    univariate: ClassVar[bool] = False
    prior_name: ClassVar[str] = "dirichlet"

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("multinomial needs at least two categories")

    @property
    def stat_dim(self):
        return self.k - 1

    @property
    def release_dim(self):
        return self.k

    def check_support(self, values):
        values = np.asarray(values)
        if (
            values.ndim != 2
            or values.shape[1] != self.k
            or not np.all((values == 0) | (values == 1))
            or not np.all(values.sum(axis=1) == 1)
        ):
            raise SupportError(f"multinomial data must be one-hot rows of length {self.k}")
        return values.astype(np.int64)

    def release_stats(self, values):
        return self.check_support(values).sum(axis=0).astype(float)

    def suff_stats(self, values):
        return self.release_stats(values)[:-1]

    def sample_data(self, theta, n, rng):
        theta = self.check_theta(theta)
        cats = rng.choice(self.k, size=n, p=theta)
        return np.eye(self.k, dtype=np.int64)[cats]

    def check_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.k,) or np.any(theta <= 0) or not math.isclose(theta.sum(), 1.0, rel_tol=1e-9):
            raise DomainError(f"multinomial parameter {theta} not in the open simplex")
        return theta

    def natural_params(self, theta):
        theta = self.check_theta(theta)
        return np.log(theta[:-1]) - math.log(theta[-1])

    def log_partition(self, eta):
        top = max(0.0, max(ad.value_of(e) for e in eta))
        total = math.exp(-top)
        for e in eta:
            total = total + ad.exp(e - top)
        return top + ad.log(total)

    def first_param(self, theta):
        return float(theta[0])

    def valid_stats(self, s, n):
        s = np.asarray(s, dtype=float)
        return bool(np.all(s >= 0.0) and s.sum() <= n)

    def project_stats(self, s, n):
        # Negatives go to zero; the remaining counts are scaled down only if they overflow n.
        s = np.clip(np.asarray(s, dtype=float).reshape(-1), 0.0, None)
        total = s.sum()
        if total > n:
            s = s * (n / total)
        return s

    def prior_from_dict(self, spec):
        try:
            alpha = tuple(float(a) for a in spec["alpha"])
        except KeyError as exc:
            raise ConfigError(f"dirichlet prior needs field {exc.args[0]!r}") from None
        if len(alpha) != self.k:
            raise ConfigError(f"dirichlet prior needs {self.k} concentrations, got {len(alpha)}")
        return HyperParams(self, alpha)

    def posterior_params(self, params, s, n):
        s = np.asarray(s, dtype=float).reshape(-1)
        return np.concatenate([params[:-1] + s, [params[-1] + n - s.sum()]])

    def to_lambda(self, params):
        return np.asarray(params[:-1], dtype=float), float(np.sum(params))

    def from_lambda(self, lambda1, lambda2):
        lambda1 = np.asarray(lambda1, dtype=float)
        return np.concatenate([lambda1, [lambda2 - lambda1.sum()]])

    def sample_param(self, params, rng):
        theta = np.clip(rng.dirichlet(params), THETA_EPS, None)
        return theta / theta.sum()

    def to_dict(self):
        return {"family": self.name, "k": self.k}


@dataclass(frozen=True)
class Exponential(Family):
    name: ClassVar[str] = "exponential"
    bounded: ClassVar[bool] = False
    prior_name: ClassVar[str] = "gamma"

    def check_support(self, values):
        values = np.asarray(values, dtype=float)
        if values.ndim != 1 or not np.all(values > 0) or not np.all(np.isfinite(values)):
            raise SupportError("exponential data must be a vector of positive finite values")
        return values

    def suff_stats(self, values):
        return np.array([float(np.sum(self.check_support(values)))])

    def sample_data(self, theta, n, rng):
        theta = self.check_theta(theta)
        return rng.exponential(1.0 / theta, size=n)

    def check_theta(self, theta):
        theta = float(np.squeeze(theta))
        if not (theta > 0.0 and math.isfinite(theta)):
            raise DomainError(f"exponential rate {theta} must be positive")
        return theta

    def natural_params(self, theta):
        return np.array([-self.check_theta(theta)])

    def log_partition(self, eta):
        e = eta[0]
        if ad.value_of(e) >= 0:
            raise DomainError(f"exponential natural parameter {ad.value_of(e)} must be negative")
        return -ad.log(-e)

    def cdf(self, x, eta):
        if x <= 0:
            return 0.0
        if x == math.inf:
            return 1.0
        return -ad.expm1(eta[0] * x)

    def log_interval_mass(self, eta, v, w):
        # exp(eta v) - exp(eta w) = exp(eta v) * (-expm1(eta (w - v))) on the positive half-line
        v = max(v, 0.0)
        if not w > v:
            raise DegenerateIntervalError(f"interval [{v}, {w}] has no mass")
        e = eta[0]
        head = e * v if v > 0 else 0.0
        if w == math.inf:
            return head
        return head + ad.log(-ad.expm1(e * (w - v)))

    def support(self):
        return (0.0, math.inf)

    def stat_extrema(self, a, b):
        return [(a, b)]

    def quantile(self, theta, p):
        theta = self.check_theta(theta)
        if not 0.0 <= p < 1.0:
            raise ValueError(f"quantile level {p} outside [0, 1)")
        return -math.log1p(-p) / theta

    def valid_stats(self, s, n):
        return float(np.squeeze(s)) > 0.0

    def project_stats(self, s, n):
        return np.clip(np.asarray(s, dtype=float).reshape(1), 0.0, None)

    def clamp_stats(self, s, n):
        return np.clip(np.asarray(s, dtype=float).reshape(1), 1e-12, None)

    def prior_from_dict(self, spec):
        try:
            return HyperParams(self, (float(spec["shape"]), float(spec["rate"])))
        except KeyError as exc:
            raise ConfigError(f"gamma prior needs field {exc.args[0]!r}") from None

    def posterior_params(self, params, s, n):
        return np.array([params[0] + n, params[1] + float(np.squeeze(s))])

    def to_lambda(self, params):
        # prior on eta is exp(lambda1 * eta - lambda2 * A(eta)) = rate^(shape-1) exp(-rate_prior * rate)
        return np.array([params[1]]), float(params[0] - 1.0)

    def from_lambda(self, lambda1, lambda2):
        return np.array([lambda2 + 1.0, float(np.squeeze(lambda1))])

    def sample_param(self, params, rng):
        return max(rng.gamma(params[0], 1.0 / params[1]), THETA_EPS)


def get_family(name: str, k: int | None = None) -> Family:
    if name in ("bernoulli", "binomial"):
        return Bernoulli()
    if name == "exponential":
        return Exponential()
    if name == "multinomial":
        if k is None:
            raise ConfigError("multinomial family needs the category count 'k'")
        return Multinomial(int(k))
    raise ConfigError(f"unknown family {name!r}")


def family_from_dict(spec: dict) -> Family:
    if "family" not in spec:
        raise ConfigError("missing field 'family'")
    return get_family(spec["family"], spec.get("k"))


@dataclass(frozen=True)
class HyperParams:
    """Conjugate-prior hyperparameters.

    ``params`` holds the classical parameterisation users write down
    (beta ``(alpha, beta)``, Dirichlet concentrations, gamma ``(shape, rate)``).
    ``lambda1``/``lambda2`` give the natural form ``exp(lambda1 . eta -
    lambda2 A(eta))``; the two are related by the family's
    ``to_lambda``/``from_lambda`` bijection.
    """

    family: Family
    params: tuple = field(default=())

    def __post_init__(self):
        params = tuple(float(p) for p in np.asarray(self.params, dtype=float).reshape(-1))
        object.__setattr__(self, "params", params)
        if not all(p > 0 and math.isfinite(p) for p in params):
            raise InvalidStatsError(f"{self.family.prior_name} parameters must be positive, got {params}")

    @classmethod
    def from_lambda(cls, family: Family, lambda1, lambda2: float) -> "HyperParams":
        return cls(family, tuple(family.from_lambda(lambda1, lambda2)))

    @property
    def lambda1(self) -> np.ndarray:
        return self.family.to_lambda(np.array(self.params))[0]

    @property
    def lambda2(self) -> float:
        return self.family.to_lambda(np.array(self.params))[1]

    def mean(self):
        """Prior mean of theta."""
        p = np.array(self.params)
        if isinstance(self.family, Exponential):
            return p[0] / p[1]
        if isinstance(self.family, Bernoulli):
            return p[0] / p.sum()
        return p / p.sum()

    def to_dict(self) -> dict:
        p = self.params
        if isinstance(self.family, Bernoulli):
            prior = {"alpha": p[0], "beta": p[1]}
        elif isinstance(self.family, Exponential):
            prior = {"shape": p[0], "rate": p[1]}
        else:
            prior = {"alpha": list(p)}
        return {**self.family.to_dict(), "prior": prior}


def prior_from_dict(spec: dict) -> HyperParams:
    """Parse ``{"family": ..., "prior": {...}}``."""
    family = family_from_dict(spec)
    if "prior" not in spec:
        raise ConfigError("missing field 'prior'")
    return family.prior_from_dict(spec["prior"])


@dataclass(frozen=True)
class Dataset:
    family: Family
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", self.family.check_support(self.values))

    @property
    def n(self) -> int:
        return int(self.values.shape[0])


def conjugate_update(prior: HyperParams, s, n: int) -> HyperParams:
    """lambda1 + s, lambda2 + n, in classical form.

    ``s`` may be a real-valued Gibbs draw. Raises :class:`InvalidStatsError`
    when the induced posterior parameters are not all positive.
    """
    params = prior.family.posterior_params(np.array(prior.params), s, n)
    return HyperParams(prior.family, tuple(params))


def sample_posterior_param(hp: HyperParams, rng):
    return hp.family.sample_param(np.array(hp.params), rng)


def sample_prior(hp: HyperParams, rng):
    return sample_posterior_param(hp, rng)


def nonprivate_posterior(data: Dataset, prior: HyperParams) -> HyperParams:
    """Exact conjugate posterior from the raw data (calibration reference only)."""
    return conjugate_update(prior, data.family.suff_stats(data.values), data.n)


def posterior_draws(hp: HyperParams, size: int, rng) -> np.ndarray:
    """``size`` independent parameter draws, shape (size,) or (size, k)."""
    p = np.array(hp.params)
    fam = hp.family
    if isinstance(fam, Bernoulli):
        return np.clip(rngmod.beta(p[0], p[1], rng, size=size), THETA_EPS, 1 - THETA_EPS)
    if isinstance(fam, Exponential):
        return np.maximum(rngmod.gamma_shape_rate(p[0], p[1], rng, size=size), THETA_EPS)
    draws = np.clip(rngmod.dirichlet(p, rng, size=size), THETA_EPS, None)
    return draws / draws.sum(axis=1, keepdims=True)
