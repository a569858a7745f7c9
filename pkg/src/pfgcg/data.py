"""Synthetic benchmark series, CSV ingestion and train/test splitting.

Series are stored variables-by-time (N x T) in memory and time-by-variables
(T rows, N columns) on disk.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    pass


class EmptyFileError(DataError):
    pass


class RaggedRowError(DataError):
    pass


class NonNumericError(DataError):
    pass


class SplitError(DataError):
    pass


@dataclass
class TimeSeriesData:
    X: np.ndarray
    train_frac: float = 0.8
    name: str = "series"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2 or self.X.shape[1] < 2:
            raise DataError("X must be N x T with T >= 2")
        if not np.all(np.isfinite(self.X)):
            raise DataError("X contains missing or non-finite values")
        if not 0.0 < self.train_frac < 1.0:
            raise DataError("train_frac must lie in (0, 1)")

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def T(self) -> int:
        return self.X.shape[1]

    @property
    def n_train(self) -> int:
        return int(np.floor(self.train_frac * self.T))


@dataclass
class GroundTruthGraph:
    """Aggregated truth: ``G_true[i, j] = 1`` iff j Granger-causes i."""

    G_true: np.ndarray

    def __post_init__(self):
        G = np.asarray(self.G_true)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise DataError("ground truth must be square")
        if not np.all((G == 0) | (G == 1)):
            raise DataError("ground truth must be binary")
        self.G_true = G.astype(np.int8)


def rk4_step(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(f, x0, dt, n_records, subsample=1, transient=0):
    """RK4 trajectory, keeping every ``subsample``-th state after ``transient`` steps."""
    x = np.array(x0, dtype=float)
    for _ in range(transient):
        x = rk4_step(f, x, dt)
    out = np.empty((x.size, n_records))
    for t in range(n_records):
        out[:, t] = x
        for _ in range(subsample):
            x = rk4_step(f, x, dt)
    return out


def lorenz96_rhs(x, F):
    return (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1) - x + F


def lorenz96_truth(N) -> np.ndarray:
    G = np.zeros((N, N), dtype=np.int8)
    for i in range(N):
        for off in (-2, -1, 0, 1):
            G[i, (i + off) % N] = 1
    return G


def gen_lorenz96(N, T, F=40.0, dt=0.01, noise_sd=0.1, seed=0, subsample=5,
                 transient=1000, x0=None):
    """Lorenz-96 series from a perturbed equilibrium, plus its causal graph.

    Returns ``(TimeSeriesData, GroundTruthGraph)``.
    """
    if N < 4:
        raise DataError("Lorenz-96 needs N >= 4")
    if dt <= 0:
        raise DataError("dt must be positive")
    rng = np.random.default_rng(seed)
    if x0 is None:
        x0 = F + 0.01 * rng.standard_normal(N)
    X = integrate(lambda x: lorenz96_rhs(x, F), x0, dt, T, subsample, transient)
    if noise_sd > 0:
        X = X + noise_sd * rng.standard_normal(X.shape)
    return (TimeSeriesData(X, name=f"lorenz96_N{N}_T{T}_F{F:g}_seed{seed}"),
            GroundTruthGraph(lorenz96_truth(N)))


def _window(pairs, w):
    idx = np.arange(pairs)
    return (np.abs(idx[:, None] - idx[None, :]) < w).astype(float)


def lotka_volterra_rhs(z, pairs, alpha, beta, gamma, delta, window, capacity):
    x, y = z[:pairs], z[pairs:]
    dx = alpha * x - beta * x * (window @ y) - alpha * (x / capacity) ** 2
    dy = delta * y * (window @ x) - gamma * y
    return np.concatenate([dx, dy])


def lotka_volterra_truth(pairs, window, coupled=True) -> np.ndarray:
    N = 2 * pairs
    G = np.eye(N, dtype=np.int8)
    if coupled:
        W = (window > 0).astype(np.int8)
        G[:pairs, pairs:] = W
        G[pairs:, :pairs] = W.T
    return G


def gen_lotka_volterra(pairs, T, alpha=1.1, beta=0.4, gamma=0.4, delta=0.1, window=1,
                       capacity=200.0, dt=0.01, noise_sd=0.1, seed=0, subsample=10,
                       transient=0):
    """Multi-species predator-prey series on the log scale.

    Columns ``0..pairs-1`` are prey, ``pairs..2*pairs-1`` predators.  Prey
    ``i`` is eaten by predators within ``window`` positions of ``i``.
    """
    if pairs < 1:
        raise DataError("need at least one predator-prey pair")
    if alpha <= 0 or gamma <= 0 or capacity <= 0 or dt <= 0:
        raise DataError("growth, death, capacity and dt must be positive")
    if beta < 0 or delta < 0 or window < 1:
        raise DataError("interaction rates must be nonnegative and window >= 1")
    rng = np.random.default_rng(seed)
    W = _window(pairs, window)
    z0 = np.concatenate([rng.uniform(2.0, 8.0, pairs), rng.uniform(1.0, 5.0, pairs)])
    Z = integrate(lambda z: lotka_volterra_rhs(z, pairs, alpha, beta, gamma, delta, W, capacity),
                  z0, dt, T, subsample, transient)
    X = np.log(Z)
    if noise_sd > 0:
        X = X + noise_sd * rng.standard_normal(X.shape)
    coupled = beta > 0 or delta > 0
    return (TimeSeriesData(X, name=f"lv_pairs{pairs}_T{T}_seed{seed}"),
            GroundTruthGraph(lotka_volterra_truth(pairs, W, coupled)))


def _parse_float(cell):
    try:
        return float(cell)
    except ValueError:
        return None


def load_csv(path, train_frac=0.8) -> TimeSeriesData:
    """Read a T x N numeric table; a non-numeric first row is taken as a header."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [(n, r) for n, r in enumerate(csv.reader(fh), start=1) if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyFileError(f"{path}: empty file")
    if any(_parse_float(c) is None for c in rows[0][1]):
        rows = rows[1:]
        if not rows:
            raise EmptyFileError(f"{path}: header but no data")
    width = len(rows[0][1])
    values = []
    for lineno, row in rows:
        if len(row) != width:
            raise RaggedRowError(f"{path}:{lineno}: expected {width} cells, got {len(row)}")
        parsed = [_parse_float(c) for c in row]
        if any(v is None for v in parsed):
            raise NonNumericError(f"{path}:{lineno}: non-numeric cell")
        values.append(parsed)
    return TimeSeriesData(np.array(values).T, train_frac=train_frac, name=path.stem)


def write_series_csv(data: TimeSeriesData, path) -> None:
    header = ",".join(f"x{i}" for i in range(data.N))
    np.savetxt(path, data.X.T, delimiter=",", header=header, comments="", fmt="%.10g")


def write_matrix_csv(M, path, fmt="%.10g") -> None:
    np.savetxt(path, np.asarray(M), delimiter=",", fmt=fmt)


def read_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    M = np.loadtxt(path, delimiter=",", ndmin=2)
    return M


def split_train_test(data: TimeSeriesData):
    """Contiguous split at floor(train_frac * T); returns (train, test) arrays."""
    if data.T < 5:
        raise SplitError("need T >= 5 to split")
    n = data.n_train
    share = data.train_frac * data.T
    # a side whose nominal share is under one timestamp counts as empty
    if share < 1.0 or data.T - share < 1.0 or n == 0 or n == data.T:
        raise SplitError(f"train_frac={data.train_frac} of T={data.T} leaves an empty side")
    return data.X[:, :n], data.X[:, n:]


def read_kv(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def write_kv(d: dict, path) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in d.items()))
