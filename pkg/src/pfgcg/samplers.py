"""Seeded random variates for the Gibbs sweep.

Gamma draws are parameterised by (shape, scale), so the mean is shape * scale.
Every conditional posterior in the sampler passes an inverse rate as the
second argument.

All samplers accept scalars or arrays and broadcast like numpy.  They take
either an :class:`RngStream` or a bare ``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

TINY = np.finfo(float).tiny
# tail mass below which truncated Poisson draws saturate at the threshold
SATURATION_TAIL = 1e-300


class ParameterDomainError(ValueError):
    """A distribution parameter is outside its support."""


@dataclass
class RngStream:
    """Independent PCG64 stream identified by ``(seed, stream_id)``.

    Streams with the same seed and different ids are spawned children of
    one ``SeedSequence`` and are statistically independent.
    """

    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise ParameterDomainError("seed and stream_id must be unsigned")
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def _scalar_or_array(x):
    return x.item() if isinstance(x, np.ndarray) and x.ndim == 0 else x


def _all_positive(x) -> bool:
    return x.size == 0 or bool(x.min() > 0)  # False for NaN as well


def sample_gamma(shape, scale, rng, size=None):
    """Gamma(shape, scale) draws, strictly positive.

    Shapes below one use the boost ``G(shape + 1) * U ** (1 / shape)``
    evaluated in log space; results that would underflow are floored at the
    smallest normal double so downstream logs and divisions stay finite.
    """
    gen = as_generator(rng)
    shape = np.asarray(shape, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if not (_all_positive(shape) and _all_positive(scale)):
        raise ParameterDomainError("gamma shape and scale must be positive")
    if size is None:
        size = np.broadcast_shapes(shape.shape, scale.shape)
    small = shape < 1.0
    if not small.any():
        g = gen.standard_gamma(shape, size=size)
    else:
        shape = np.broadcast_to(shape, size)
        small = np.broadcast_to(small, size)
        g = gen.standard_gamma(shape + small, size=size)
        u = gen.random(size=size)
        with np.errstate(divide="ignore"):
            log_g = np.log(g) + np.log1p(-u) / shape
        g = np.where(small, np.exp(log_g), g)
    out = np.maximum(g * scale, TINY)
    return _scalar_or_array(out)


def sample_normal(mean, variance, rng, size=None):
    gen = as_generator(rng)
    variance = np.asarray(variance, dtype=float)
    if np.any(~(variance > 0)):
        raise ParameterDomainError("normal variance must be positive")
    return _scalar_or_array(gen.normal(mean, np.sqrt(variance), size=size))


def sample_poisson(rate, rng, size=None):
    gen = as_generator(rng)
    rate = np.asarray(rate, dtype=float)
    if np.any(~(rate >= 0)):
        raise ParameterDomainError("Poisson rate must be nonnegative")
    return _scalar_or_array(gen.poisson(rate, size=size))


def _as_shape(size, *shapes):
    if size is None:
        return np.broadcast_shapes(*shapes)
    return (size,) if np.isscalar(size) else tuple(size)


def _check_threshold(V):
    V = np.asarray(V)
    if np.any(V < 1) or not np.issubdtype(V.dtype, np.integer):
        raise ParameterDomainError("threshold V must be a positive integer")
    return V


def sample_left_truncated_poisson(rate, V, rng, size=None):
    """Poisson(rate) conditioned on the draw being at least ``V``.

    Inverse CDF on the survival side: with ``w = U * P(X >= V)`` return the
    smallest ``m >= V`` with ``P(X > m) <= w``.  The search is a vectorised
    integer bisection on the regularised incomplete gamma, which stays
    accurate when the tail mass is tiny.  If ``P(X >= V)`` underflows the draw
    saturates at ``V``.
    """
    gen = as_generator(rng)
    rate = np.asarray(rate, dtype=float)
    V = _check_threshold(V)
    if np.any(~(rate > 0)):
        raise ParameterDomainError("truncated Poisson rate must be positive")
    size = _as_shape(size, rate.shape, V.shape)
    rate = np.broadcast_to(rate, size).astype(float)
    V = np.broadcast_to(V, size).astype(np.int64)
    tail = special.pdtrc(V - 1, rate)
    w = (1.0 - gen.random(size=size)) * tail

    lo = V - 1  # pdtrc(lo) > w always holds here
    hi = V + np.ceil(rate + 10.0 * np.sqrt(rate) + 10.0).astype(np.int64)
    while True:
        bad = special.pdtrc(hi, rate) > w
        if not np.any(bad):
            break
        hi = np.where(bad, 2 * hi, hi)
    while np.any(hi - lo > 1):
        mid = (lo + hi) // 2
        ok = special.pdtrc(mid, rate) <= w
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    out = np.where(tail < SATURATION_TAIL, V, hi)
    return _scalar_or_array(out)


def sample_categorical_poisson_tail(rate, V, rng, size=None):
    """Draw v in {0, ..., V-1} with probability proportional to the Poisson pmf."""
    gen = as_generator(rng)
    rate = np.asarray(rate, dtype=float)
    V = _check_threshold(V)
    if np.any(~(rate > 0)):
        raise ParameterDomainError("Poisson rate must be positive")
    size = _as_shape(size, rate.shape, V.shape)
    rate = np.broadcast_to(rate, size)
    V = np.broadcast_to(V, size)
    vmax = int(V.max()) if V.size else 1
    v = np.arange(vmax).reshape((vmax,) + (1,) * len(size))
    # rate ** v / v!, relative to the v=0 term
    logw = v * np.log(rate)[None] - special.gammaln(v + 1.0)
    logw = np.where(v < V[None], logw, -np.inf)
    logw -= logw.max(axis=0, keepdims=True)
    cdf = np.cumsum(np.exp(logw), axis=0)
    u = gen.random(size=size) * cdf[-1]
    out = np.sum(cdf <= u[None], axis=0)
    return _scalar_or_array(np.minimum(out, V - 1))


def sample_multinomial(total, probs, rng):
    """Multinomial counts; ``probs`` may carry leading batch axes."""
    gen = as_generator(rng)
    probs = np.asarray(probs, dtype=float)
    total = np.asarray(total)
    if np.any(probs < 0):
        raise ParameterDomainError("multinomial probabilities must be nonnegative")
    if np.any(total < 0):
        raise ParameterDomainError("multinomial total must be nonnegative")
    s = probs.sum(axis=-1, keepdims=True)
    if np.any(np.abs(s - 1.0) > 1e-9):
        raise ParameterDomainError("multinomial probabilities must sum to one")
    return gen.multinomial(total, probs / s)


# customers per entry seated exactly; the rest are pooled into a Poisson
CRT_EXACT_CUSTOMERS = 2000


def sample_crt(count, concentration, rng):
    """Chinese restaurant table counts, ``sum_i Bernoulli(a / (a + i - 1))``.

    The first ``CRT_EXACT_CUSTOMERS`` customers of each entry are seated one
    Bernoulli trial at a time, laid out as one flat array.  Later customers
    open tables with probability at most ``a / (a + CRT_EXACT_CUSTOMERS)``,
    and their total is drawn as a Poisson with the exact mean
    ``a * (digamma(a + n) - digamma(a + CRT_EXACT_CUSTOMERS))``.  The total
    variation error of that step is below ``a**2 / (a + CRT_EXACT_CUSTOMERS)``.
    """
    gen = as_generator(rng)
    count = np.asarray(count, dtype=np.int64)
    conc = np.broadcast_to(np.asarray(concentration, dtype=float), count.shape)
    if np.any(count < 0):
        raise ParameterDomainError("CRT count must be nonnegative")
    if np.any(~(conc > 0)):
        raise ParameterDomainError("CRT concentration must be positive")
    flat = count.ravel()
    a_flat = conc.ravel()
    exact = np.minimum(flat, CRT_EXACT_CUSTOMERS)
    total = int(exact.sum())
    tables = np.zeros(flat.size, dtype=np.int64)
    if total > 0:
        owner = np.repeat(np.arange(flat.size), exact)
        starts = np.cumsum(exact) - exact
        seat = np.arange(total) - starts[owner]  # i - 1 for the i-th customer
        a = a_flat[owner]
        opens = gen.random(total) < a / (a + seat)
        tables += np.bincount(owner, weights=opens, minlength=flat.size).astype(np.int64)
    big = flat > CRT_EXACT_CUSTOMERS
    if np.any(big):
        a = a_flat[big]
        mean = a * (special.digamma(a + flat[big]) - special.digamma(a + CRT_EXACT_CUSTOMERS))
        tables[big] += gen.poisson(mean)
    tables = np.minimum(tables, flat)
    return _scalar_or_array(tables.reshape(count.shape))


def sample_bernoulli(p, rng, size=None):
    gen = as_generator(rng)
    p = np.asarray(p, dtype=float)
    if np.any(p < -1e-9) or np.any(p > 1 + 1e-9) or np.any(np.isnan(p)):
        raise ParameterDomainError("Bernoulli probability must lie in [0, 1]")
    if size is None:
        size = p.shape
    out = (gen.random(size=size) < np.clip(p, 0.0, 1.0)).astype(np.int8)
    return _scalar_or_array(out)
