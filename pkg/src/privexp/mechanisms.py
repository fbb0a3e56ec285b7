"""Release side: Laplace noise on (truncated) sufficient statistics, and OPS.

This module and :mod:`privexp.expfam` are the only places that see raw data.
Everything downstream consumes a :class:`NoisyRelease`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import rng as rngmod
from .errors import ConfigError, MustTruncateError, UnsupportedOperationError
from .expfam import Bernoulli, Dataset, Family, HyperParams, family_from_dict
from .truncation import Interval, trunc_sensitivity


@dataclass(frozen=True)
class NoisyRelease:
    family: Family
    y: np.ndarray
    n: int
    epsilon: float
    delta_s: float
    bounds: Interval | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        object.__setattr__(self, "y", y)
        if y.size != self.family.release_dim:
            raise ConfigError(f"{self.family.name} release needs {self.family.release_dim} values, got {y.size}")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ConfigError(f"epsilon must be positive and finite, got {self.epsilon}")
        if not (self.delta_s > 0 and math.isfinite(self.delta_s)):
            raise ConfigError(f"sensitivity must be positive and finite, got {self.delta_s}")
        if (self.bounds is None) == (not self.family.bounded):
            raise ConfigError("bounds are required exactly when the family has unbounded statistics")

    @property
    def scale(self) -> float:
        """Laplace noise scale Delta / epsilon."""
        return self.delta_s / self.epsilon

    def to_dict(self) -> dict:
        out = self.family.to_dict()
        out.update(
            n=self.n,
            epsilon=self.epsilon,
            delta_s=self.delta_s,
            bounds=None if self.bounds is None else self.bounds.to_list(),
            y=[float(v) for v in self.y],
        )
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "NoisyRelease":
        d = dict(d)
        if d.get("family") == "multinomial" and "k" not in d and "y" in d:
            d["k"] = len(d["y"])
        family = family_from_dict(d)
        for key in ("n", "epsilon", "delta_s", "y"):
            if key not in d:
                raise ConfigError(f"release is missing field {key!r}")
        bounds = d.get("bounds")
        return cls(
            family=family,
            y=np.asarray(d["y"], dtype=float),
            n=int(d["n"]),
            epsilon=float(d["epsilon"]),
            delta_s=float(d["delta_s"]),
            bounds=None if bounds is None else Interval.from_list(bounds),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def sensitivity_bounded(family: Family) -> float:
    """L1 sensitivity of the released statistic under record replacement."""
    if not family.bounded:
        raise MustTruncateError(f"{family.name} statistics are unbounded; supply truncation bounds")
    if family.name == "multinomial":
        # one record switching category moves two counts by one
        return 2.0
    return 1.0


def laplace_release(stats, delta_s: float, epsilon: float, rng) -> np.ndarray:
    stats = np.asarray(stats, dtype=float)
    return stats + rngmod.laplace(np.zeros_like(stats), delta_s / epsilon, rng)


def release_bounded(data: Dataset, epsilon: float, rng) -> NoisyRelease:
    family = data.family
    delta = sensitivity_bounded(family)
    y = laplace_release(family.release_stats(data.values), delta, epsilon, rng)
    return NoisyRelease(family, y, data.n, float(epsilon), delta)


def truncated_stats(data: Dataset, bounds: Interval) -> np.ndarray:
    """Statistic summed over records inside the bounds (others are redacted)."""
    values = data.values
    keep = (values >= bounds.v) & (values <= bounds.w)
    return data.family.suff_stats(values[keep]) if keep.any() else np.zeros(data.family.stat_dim)


def release_truncated(data: Dataset, epsilon: float, bounds: Interval, rng) -> NoisyRelease:
    family = data.family
    if not family.univariate:
        raise UnsupportedOperationError("truncated release needs a univariate family")
    if not bounds.finite:
        raise MustTruncateError("truncation bounds must be finite")
    delta = trunc_sensitivity(family, bounds)
    y = laplace_release(truncated_stats(data, bounds), delta, epsilon, rng)
    return NoisyRelease(family, y, data.n, float(epsilon), delta, bounds)


def release(data: Dataset, epsilon: float, rng, bounds: Interval | None = None) -> NoisyRelease:
    """Dispatch on whether the family needs truncation."""
    if data.family.bounded:
        return release_bounded(data, epsilon, rng)
    if bounds is None:
        raise MustTruncateError(f"{data.family.name} statistics are unbounded; supply truncation bounds")
    return release_truncated(data, epsilon, bounds, rng)


def ops_temperature(epsilon_sample: float, a0: float) -> float:
    """Exponential-mechanism tempering for a log-likelihood utility on [a0, 1 - a0]."""
    delta_u = math.log((1.0 - a0) / a0)
    return epsilon_sample / (2.0 * delta_u)


def _truncated_beta(a: float, b: float, lo: float, hi: float, size: int, rng) -> np.ndarray:
    """Inverse-CDF draws from Beta(a, b) restricted to [lo, hi]."""
    u = rng.random(size)
    f_lo, f_hi = special.betainc(a, b, lo), special.betainc(a, b, hi)
    if f_hi - f_lo > 1e-12:
        return np.clip(special.betaincinv(a, b, f_lo + u * (f_hi - f_lo)), lo, hi)
    # mass sits in the upper tail: work with the mirrored distribution's CDF
    g_lo, g_hi = special.betainc(b, a, 1.0 - hi), special.betainc(b, a, 1.0 - lo)
    if g_hi - g_lo > 1e-12:
        return np.clip(1.0 - special.betaincinv(b, a, g_lo + u * (g_hi - g_lo)), lo, hi)
    return np.full(size, lo if a / (a + b) < lo else hi)


def ops_release(
    data: Dataset,
    epsilon: float,
    prior: HyperParams,
    rng,
    k_samples: int = 100,
    a0: float = 0.1,
) -> np.ndarray:
    """One-posterior-sampling baseline for the Bernoulli model.

    Releases ``k_samples`` draws, each epsilon/k_samples-private, from the
    prior times the tempered likelihood restricted to [a0, 1 - a0].
    """
    if not isinstance(data.family, Bernoulli):
        raise UnsupportedOperationError("OPS is implemented for the Bernoulli model only")
    if not 0.0 < a0 < 0.5:
        raise ValueError(f"a0 must lie in (0, 0.5), got {a0}")
    gamma = ops_temperature(epsilon / k_samples, a0)
    s = float(data.family.suff_stats(data.values)[0])
    alpha, beta_ = prior.params
    return _truncated_beta(alpha + gamma * s, beta_ + gamma * (data.n - s), a0, 1.0 - a0, k_samples, rng)


def binned_kde(samples: np.ndarray, grid: np.ndarray, bandwidth: float) -> np.ndarray:
    """Gaussian KDE evaluated on an evenly spaced grid via histogram convolution."""
    step = grid[1] - grid[0]
    edges = np.concatenate([grid - step / 2, [grid[-1] + step / 2]])
    counts, _ = np.histogram(samples, bins=edges)
    half = int(math.ceil(5 * bandwidth / step))
    offsets = np.arange(-half, half + 1) * step
    kernel = np.exp(-0.5 * (offsets / bandwidth) ** 2)
    kernel /= kernel.sum()
    return np.convolve(counts, kernel, mode="same") / (len(samples) * step)


def neighbor_log_ratio(
    data: Dataset,
    neighbor: Dataset,
    epsilon: float,
    releases: int,
    rng,
    bandwidth: float = 0.2,
    min_density: float = 0.01,
) -> float:
    """Largest |log p(y | data) - log p(y | neighbor)| from density estimates.

    Both output densities are estimated from ``releases`` Laplace releases of
    the first released coordinate; the ratio is taken on the grid points where
    both estimated densities exceed ``min_density``.
    """
    family = data.family
    delta = sensitivity_bounded(family)
    sa = family.release_stats(data.values)[0]
    sb = family.release_stats(neighbor.values)[0]
    ya = laplace_release(np.full(releases, sa), delta, epsilon, rng)
    yb = laplace_release(np.full(releases, sb), delta, epsilon, rng)
    span = 10.0 * delta / epsilon
    grid = np.arange(min(sa, sb) - span, max(sa, sb) + span, bandwidth / 4)
    da = binned_kde(ya, grid, bandwidth)
    db = binned_kde(yb, grid, bandwidth)
    ok = (da > min_density) & (db > min_density)
    return float(np.max(np.abs(np.log(da[ok]) - np.log(db[ok]))))
