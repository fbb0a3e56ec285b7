"""Truncated exponential families and the random-sum normal approximation.

Conditioning a univariate family on ``x in [v, w]`` gives another exponential
family whose log-partition is ``A(eta) + log(F(w; eta) - F(v; eta))``. Its
mean and covariance come from the same derivatives as the untruncated ones,
and the statistic summed over the (binomially many) records that land in the
interval is approximately normal with

    m = n q mu_hat,    V = n q Sigma_hat + n q (1 - q) mu_hat mu_hat^T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DegenerateIntervalError, UnsupportedOperationError
from .expfam import Family

# Below this mass an interval is treated as empty.
MIN_MASS = 1e-12


@dataclass(frozen=True)
class Interval:
    v: float = -math.inf
    w: float = math.inf

    def __post_init__(self):
        v = -math.inf if self.v is None else float(self.v)
        w = math.inf if self.w is None else float(self.w)
        if not v < w:
            raise ValueError(f"interval needs v < w, got [{v}, {w}]")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)

    def clip_to(self, family: Family) -> "Interval":
        lo, hi = family.support()
        v, w = max(self.v, lo), min(self.w, hi)
        if not v < w:
            raise DegenerateIntervalError(f"[{self.v}, {self.w}] misses the support of {family.name}")
        return Interval(v, w)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.v) and math.isfinite(self.w)

    def to_list(self):
        return [None if math.isinf(self.v) else self.v, None if math.isinf(self.w) else self.w]

    @classmethod
    def from_list(cls, bounds) -> "Interval":
        a, b = bounds
        return cls(a, b)


@dataclass(frozen=True)
class RsCltParams:
    m: np.ndarray
    V: np.ndarray
    q: float


def _require_univariate(family: Family):
    if not family.univariate:
        raise UnsupportedOperationError(f"truncation is only defined for univariate families, not {family.name}")


def interval_mass(family: Family, theta, iv: Interval) -> float:
    """Pr(x in [v, w]) under the untruncated model."""
    _require_univariate(family)
    eta = list(family.natural_params(theta))
    try:
        return math.exp(family.log_interval_mass(eta, iv.v, iv.w))
    except DegenerateIntervalError:
        return 0.0


def trunc_log_partition(family: Family, eta, iv: Interval):
    """A(eta) + log(F(w; eta) - F(v; eta)); accepts floats or duals."""
    _require_univariate(family)
    return family.log_partition(eta) + family.log_interval_mass(eta, iv.v, iv.w)


def _trunc_pieces(family: Family, theta, intervals):
    """(q, mu_hat, Sigma_hat) per interval, sharing one evaluation of A(eta).

    ``None`` entries and intervals with mass below MIN_MASS yield ``None``.
    """
    seeds = ad.lift(family.natural_params(theta))
    d = len(seeds)
    base = family.log_partition(seeds)
    out = []
    for iv in intervals:
        if iv is None:
            out.append(None)
            continue
        try:
            log_mass = family.log_interval_mass(seeds, iv.v, iv.w)
        except DegenerateIntervalError:
            out.append(None)
            continue
        q = math.exp(ad.value_of(log_mass))
        if q < MIN_MASS:
            out.append(None)
            continue
        total = base + log_mass
        if isinstance(total, ad.Dual2):
            out.append((q, total.grad, total.hess))
        else:
            out.append((q, np.zeros(d), np.zeros((d, d))))
    return out


def _degenerate(iv: Interval):
    return DegenerateIntervalError(f"interval [{iv.v}, {iv.w}] has mass below {MIN_MASS}")


def trunc_moments(family: Family, theta, iv: Interval) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of t(x) given x in ``iv``."""
    _require_univariate(family)
    (piece,) = _trunc_pieces(family, theta, [iv])
    if piece is None:
        raise _degenerate(iv)
    return piece[1], piece[2]


def _to_params(piece, n: int, d: int) -> RsCltParams:
    if piece is None:
        return RsCltParams(m=np.zeros(d), V=np.zeros((d, d)), q=0.0)
    q, mu_hat, sigma_hat = piece
    m = n * q * mu_hat
    V = n * q * sigma_hat + n * q * (1.0 - q) * np.outer(mu_hat, mu_hat)
    return RsCltParams(m=m, V=V, q=q)


def rs_clt(family: Family, theta, iv: Interval, n: int) -> RsCltParams:
    """Normal approximation to the statistic summed over records falling in ``iv``."""
    _require_univariate(family)
    if n < 1:
        raise ValueError("n must be at least 1")
    (piece,) = _trunc_pieces(family, theta, [iv])
    if piece is None:
        raise _degenerate(iv)
    return _to_params(piece, n, family.stat_dim)


def rs_clt_many(family: Family, theta, intervals, n: int) -> list[RsCltParams]:
    """:func:`rs_clt` for several intervals at one parameter value.

    Missing (``None``) or massless intervals contribute zero mean and covariance.
    """
    _require_univariate(family)
    if n < 1:
        raise ValueError("n must be at least 1")
    return [_to_params(p, n, family.stat_dim) for p in _trunc_pieces(family, theta, intervals)]


def rs_clt_or_empty(family: Family, theta, iv: Interval, n: int) -> RsCltParams:
    """Like :func:`rs_clt` but returns a zero contribution for a massless interval."""
    return rs_clt_many(family, theta, [iv], n)[0]


def trunc_sensitivity(family: Family, iv: Interval) -> float:
    """Upper bound on the L1 sensitivity of the truncated statistic.

    Sum over coordinates of max(max |t_j| on [a, b], range of t_j on [a, b]).
    """
    _require_univariate(family)
    if not iv.finite:
        raise ValueError("truncation bounds must be finite")
    total = 0.0
    for lo, hi in family.stat_extrema(iv.v, iv.w):
        total += max(abs(lo), abs(hi), hi - lo)
    return total


def split_intervals(family: Family, a: float, b: float) -> tuple[Interval, Interval, Interval]:
    """Lower, centre and upper intervals around bounds [a, b], clipped to the support."""
    lo, hi = family.support()
    lower = Interval(lo, a) if a > lo else None
    upper = Interval(b, hi) if b < hi else None
    return lower, Interval(a, b), upper
