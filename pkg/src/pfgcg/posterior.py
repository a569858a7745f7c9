"""Collection schedule, posterior summaries and one-step prediction."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .gibbs import gibbs_sweep, make_stats
from .model import PFGCGState, init_state
from .samplers import ParameterDomainError, as_generator, sample_bernoulli

log = logging.getLogger(__name__)


class StaleStatisticsError(RuntimeError):
    """Edge probabilities do not belong to the current sweep."""


class NumericalFailure(RuntimeError):
    """The chain state contains NaN or infinite values."""

    def __init__(self, message, state=None, iteration=None):
        super().__init__(message)
        self.state = state
        self.iteration = iteration


@dataclass
class RunSchedule:
    total_iters: int = 10000
    burn_in: int = 5000
    thin: int = 10

    def __post_init__(self):
        if not 0 <= self.burn_in < self.total_iters:
            raise ValueError("burn_in must be in [0, total_iters)")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")

    @property
    def H(self) -> int:
        return (self.total_iters - self.burn_in) // self.thin

    def collects(self, iteration: int) -> bool:
        """Whether 1-based ``iteration`` is a collection point."""
        k = iteration - self.burn_in
        return k > 0 and k % self.thin == 0 and k // self.thin <= self.H


@dataclass
class PosteriorAccumulator:
    Y: np.ndarray          # (N, N, tau_max, H) float32
    B_mean: np.ndarray     # (tau_max, N, N)
    r_mean: np.ndarray     # (tau_max, K)
    n: int = 0
    mse_trace: list = field(default_factory=list)

    @classmethod
    def empty(cls, N, tau_max, K, H):
        return cls(Y=np.zeros((N, N, tau_max, H), dtype=np.float32),
                   B_mean=np.zeros((tau_max, N, N)), r_mean=np.zeros((tau_max, K)))

    @property
    def H(self) -> int:
        return self.Y.shape[3]

    def collected(self) -> np.ndarray:
        return self.Y[..., :self.n]


def record_collection(state: PFGCGState, stats, acc: PosteriorAccumulator, h: int):
    if h >= acc.H or h != acc.n:
        raise IndexError(f"collection {h} out of order (have {acc.n} of {acc.H})")
    if stats.edge_probs_sweep != stats.sweep:
        raise StaleStatisticsError(
            f"edge probabilities from sweep {stats.edge_probs_sweep}, state at {stats.sweep}")
    acc.Y[..., h] = np.transpose(stats.edge_probs, (1, 2, 0))
    acc.n += 1
    w = 1.0 / acc.n
    acc.B_mean += w * (state.B - acc.B_mean)
    r = np.stack([f.r for f in state.factors])
    acc.r_mean += w * (r - acc.r_mean)
    return acc


def _require(acc):
    if acc.n == 0:
        raise ValueError("no collections recorded")


def posterior_edge_mean(acc: PosteriorAccumulator) -> np.ndarray:
    """Per-lag Bernoulli posterior mean, shape (tau_max, N, N)."""
    _require(acc)
    m = acc.collected().astype(np.float64).mean(axis=3)
    return np.transpose(m, (2, 0, 1))


def aggregate_lags(acc: PosteriorAccumulator) -> np.ndarray:
    """Max over lags within each collection, then mean over collections."""
    _require(acc)
    return acc.collected().astype(np.float64).max(axis=2).mean(axis=2)


def merge_accumulators(accs) -> PosteriorAccumulator:
    """Pool collections from several chains into one accumulator."""
    accs = list(accs)
    Y = np.concatenate([a.collected() for a in accs], axis=3)
    n = Y.shape[3]
    B = sum(a.B_mean * a.n for a in accs) / n
    r = sum(a.r_mean * a.n for a in accs) / n
    return PosteriorAccumulator(Y=Y, B_mean=B, r_mean=r, n=n)


def sample_binary_graph(scores, rng) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    if np.any(scores < 0) or np.any(scores > 1) or np.any(np.isnan(scores)):
        raise ValueError("scores must lie in [0, 1]")
    return np.asarray(sample_bernoulli(scores, rng), dtype=np.int8)


def predict_one_step(B, X_history, t: int) -> np.ndarray:
    """x_hat_t = sum_tau B[tau] x_{t - tau}; ``t`` is a 0-based column index."""
    B = np.asarray(B, dtype=float)
    L = B.shape[0]
    if t < L or t > X_history.shape[1]:
        raise ValueError(f"need columns {t - L}..{t - 1} of history for t={t}")
    return sum(B[tau] @ X_history[:, t - 1 - tau] for tau in range(L))


def predict_range(B, X, start: int) -> np.ndarray:
    """One-step predictions for columns ``start..T-1``, shape (N, T - start)."""
    L = B.shape[0]
    if start < L:
        raise ValueError("start must be at least tau_max")
    T = X.shape[1]
    return sum(B[tau] @ X[:, start - 1 - tau:T - 1 - tau] for tau in range(L))


def active_factor_count(acc: PosteriorAccumulator, threshold: float = 0.01) -> np.ndarray:
    return (acc.r_mean > threshold).sum(axis=1)


def run_chain(X, config, schedule: RunSchedule, rng, test_start=None,
              trace=None, scan="row", order="blocked", rescale=True):
    """Fit one chain on ``X[:, :test_start]`` and collect posterior summaries.

    When ``test_start`` is given the columns from there on are the test split
    and the per-iteration one-step MSE is recorded.  ``trace`` is an optional
    file object receiving one JSON record per iteration.
    """
    gen = as_generator(rng)
    X = np.asarray(X, dtype=float)
    train = X if test_start is None else X[:, :test_start]
    state = init_state(config, gen)
    stats = make_stats(train, state)
    acc = PosteriorAccumulator.empty(config.N, config.tau_max, config.K, schedule.H)
    for it in range(1, schedule.total_iters + 1):
        try:
            gibbs_sweep(state, train, stats, gen, scan=scan, order=order, rescale=rescale)
        except (ParameterDomainError, FloatingPointError) as exc:
            raise NumericalFailure(f"sweep {it} failed: {exc}", state=state, iteration=it) from exc
        if not state.is_finite():
            raise NumericalFailure(f"non-finite state at iteration {it}", state=state, iteration=it)
        mse = None
        if test_start is not None:
            pred = predict_range(state.B, X, test_start)
            mse = float(np.mean((pred - X[:, test_start:]) ** 2))
            acc.mse_trace.append(mse)
        if schedule.collects(it):
            record_collection(state, stats, acc, acc.n)
        if trace is not None:
            trace.write(json.dumps(trace_record(state, it, mse)) + "\n")
    return state, acc


def trace_record(state, iteration, mse=None, threshold=0.01) -> dict:
    return {
        "iteration": iteration,
        "mse": mse,
        "edge_density": [float(g.mean()) for g in state.G],
        "active_factors": [int((f.r > threshold).sum()) for f in state.factors],
    }
