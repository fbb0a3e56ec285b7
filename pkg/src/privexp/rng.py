"""Seeded random variate generation.

Every stream is a :class:`numpy.random.Generator` over the counter-based
Philox bit generator. Child streams for trials and chains are derived from a
root seed through :class:`numpy.random.SeedSequence` spawn keys, so
``make_rng(seed, i)`` and ``make_rng(seed, j)`` are independent for ``i != j``
and nothing ever depends on process scheduling.

This is simulation-grade randomness. Nothing here is suitable for a hardened
differential-privacy deployment (floating-point Laplace noise is known to leak
through its low-order bits).
"""

from __future__ import annotations

import math

import numpy as np

Generator = np.random.Generator


def make_rng(seed: int, *stream: int) -> Generator:
    """Return the generator for ``seed`` and optional substream indices."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def _positive(name, value):
    if isinstance(value, float):
        ok = value > 0
    else:
        ok = np.all(np.asarray(value) > 0)
    if not ok:
        raise ValueError(f"{name} must be positive, got {value!r}")


def laplace(loc, scale, rng: Generator, size=None):
    """Laplace draws, independent per coordinate of ``loc``."""
    _positive("scale", scale)
    if size is None:
        size = np.shape(loc) or None
    return rng.laplace(loc, scale, size=size)


def inverse_gaussian(mean, shape, rng: Generator, size=None):
    """Inverse-Gaussian draws by the Michael-Schucany-Haas transformation.

    A chi-square(1) variate is mapped to the smaller root of the quadratic
    relating it to the IG variate; the larger root ``mean**2 / x`` is taken with
    probability ``x / (mean + x)``. The smaller root is computed in the
    rationalised form ``mean / (1 + a + sqrt(a * (a + 2)))`` with
    ``a = mean * chi2 / (2 * shape)``, which stays accurate when ``mean/shape``
    is huge (tiny residuals in the noise-variance update).
    """
    _positive("mean", mean)
    _positive("shape", shape)
    mean = np.asarray(mean, dtype=float)
    shape = np.asarray(shape, dtype=float)
    if size is None:
        size = np.broadcast(mean, shape).shape
    nu = rng.standard_normal(size)
    u = rng.random(size)
    a = mean * (nu * nu) / (2.0 * shape)
    x = mean / (1.0 + a + np.sqrt(a * (a + 2.0)))
    out = np.where(u * (mean + x) <= mean, x, mean * mean / x)
    return out[()] if out.ndim == 0 else out


def inverse_gaussian_scalar(mean: float, shape: float, rng: Generator) -> float:
    """Scalar fast path of :func:`inverse_gaussian` for the Gibbs inner loop."""
    if not (mean > 0 and shape > 0):
        raise ValueError(f"inverse Gaussian needs positive parameters, got {mean}, {shape}")
    nu = rng.standard_normal()
    a = mean * nu * nu / (2.0 * shape)
    x = mean / (1.0 + a + math.sqrt(a * (a + 2.0)))
    if rng.random() * (mean + x) <= mean:
        return x
    return mean * mean / x


def mvnormal(mean, cov, rng: Generator) -> np.ndarray:
    """One multivariate normal draw via Cholesky.

    A factorisation failure is retried once with a 1e-10 ridge (relative to the
    largest diagonal entry, floored at 1). An all-zero covariance returns the
    mean exactly.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    d = mean.size
    if cov.shape != (d, d):
        raise ValueError(f"covariance shape {cov.shape} does not match mean of size {d}")
    if d == 1:
        v = cov[0, 0]
        if v < 0:
            raise np.linalg.LinAlgError(f"negative variance {v}")
        return mean + math.sqrt(v) * rng.standard_normal(1)
    if not np.any(cov):
        return mean.copy()
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        ridge = 1e-10 * max(1.0, float(np.max(np.diag(cov))))
        chol = np.linalg.cholesky(cov + ridge * np.eye(d))
    return mean + chol @ rng.standard_normal(d)


def exponential_rate(rate, rng: Generator, size=None):
    _positive("rate", rate)
    return rng.exponential(1.0 / np.asarray(rate, dtype=float), size=size)


def gamma_shape_rate(shape, rate, rng: Generator, size=None):
    _positive("shape", shape)
    _positive("rate", rate)
    return rng.gamma(shape, 1.0 / np.asarray(rate, dtype=float), size=size)


def beta(a, b, rng: Generator, size=None):
    _positive("a", a)
    _positive("b", b)
    return rng.beta(a, b, size=size)


def dirichlet(alpha, rng: Generator, size=None):
    _positive("alpha", alpha)
    return rng.dirichlet(alpha, size=size)


def binomial(n, p, rng: Generator, size=None):
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"binomial probability {p} outside [0, 1]")
    if n < 0:
        raise ValueError("binomial count must be non-negative")
    return rng.binomial(n, p, size=size)


def categorical(probs, rng: Generator, size=None):
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0) or not math.isclose(probs.sum(), 1.0, rel_tol=1e-9):
        raise ValueError("categorical probabilities must be non-negative and sum to 1")
    return rng.choice(probs.size, size=size, p=probs)
