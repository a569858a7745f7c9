"""Generalised Bernoulli-Poisson link.

A latent count ``m ~ Poisson(rate)`` is thresholded at ``V``: the edge is on
iff ``m >= V``.  Larger ``V`` gives sparser graphs at the same rate.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import special

from .samplers import (
    ParameterDomainError,
    _check_threshold,
    sample_categorical_poisson_tail,
    sample_left_truncated_poisson,
)

RECOMMENDED_V = (1, 2, 3)


def check_V(V: int) -> int:
    V = int(_check_threshold(V))
    if V not in RECOMMENDED_V:
        warnings.warn(f"V={V} is outside {{1, 2, 3}}; posterior graphs tend to be empty",
                      stacklevel=2)
    return V


def _rate(rate):
    rate = np.asarray(rate, dtype=float)
    if np.any(~(rate >= 0)):
        raise ParameterDomainError("rate must be nonnegative")
    return rate


def marginal_prob_one(rate, V):
    """P(m >= V) for m ~ Poisson(rate), i.e. the prior edge probability."""
    out = special.pdtrc(np.asarray(V) - 1, _rate(rate))
    return out.item() if np.ndim(out) == 0 else out


def prob_below_threshold(rate, V):
    """P(m < V) = sum_{v<V} exp(-rate) rate**v / v!."""
    out = special.pdtr(np.asarray(V) - 1, _rate(rate))
    return out.item() if np.ndim(out) == 0 else out


def _log_pmf_sum(rate, first, count):
    """log sum_{v=first}^{first+count-1} Poisson(v; rate), all in log space."""
    v = np.arange(first, first + count, dtype=float)
    r = rate[..., None]
    terms = -r + special.xlogy(v, r) - special.gammaln(v + 1.0)
    return special.logsumexp(terms, axis=-1)


# terms of the upper tail summed when pdtrc underflows (rate far below V)
_TAIL_TERMS = 64


def log_edge_prior(rate, V):
    """Return ``(log P(m < V), log P(m >= V))`` without underflow to NaN."""
    rate = _rate(rate)
    V = int(V)
    k = V - 1
    below = special.pdtr(k, rate)
    above = special.pdtrc(k, rate)
    with np.errstate(divide="ignore"):
        # the smaller side is summed in log space, the larger one via log1p
        log_below = np.where(below < 0.5, _log_pmf_sum(rate, 0, V), np.log1p(-above))
        log_above = np.where(above < 0.5, np.log(above), np.log1p(-below))
    tiny = (above < 1e-280) & (rate > 0)
    if np.any(tiny):
        log_above = np.where(tiny, _log_pmf_sum(np.where(tiny, rate, 1.0), V, _TAIL_TERMS),
                             log_above)
    return log_below, log_above


def sample_count_given_edge(edge, rate, V, rng):
    """Latent count conditioned on the thresholded edge value.

    ``edge=1`` gives a left-truncated Poisson draw ``>= V``; ``edge=0`` a draw
    from the normalised pmf on ``{0, ..., V-1}``.
    """
    edge = np.asarray(edge)
    rate = np.asarray(rate, dtype=float)
    if np.any(~(rate > 0)):
        raise ParameterDomainError("rate must be positive")
    edge, rate = np.broadcast_arrays(edge, rate)
    out = np.zeros(edge.shape, dtype=np.int64)
    on = edge.astype(bool)
    if np.any(on):
        out[on] = sample_left_truncated_poisson(rate[on], V, rng, size=int(on.sum()))
    off = ~on
    if V > 1 and np.any(off):
        out[off] = sample_categorical_poisson_tail(rate[off], V, rng, size=int(off.sum()))
    return out.item() if out.ndim == 0 else out
