"""Chain state for the Poisson-factorised Granger-causal graph model."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import gbpl
from .samplers import TINY, as_generator, sample_gamma, sample_normal, sample_poisson

CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    N: int
    T: int
    tau_max: int = 1
    K: int = 50
    V: int = 1
    fixed_dense_graph: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError("N must be at least 1")
        if self.K < 1 or self.tau_max < 1 or self.V < 1:
            raise ConfigError("K, tau_max and V must be at least 1")
        if self.T <= self.tau_max:
            raise ConfigError("T must exceed tau_max")

    @property
    def T_eff(self) -> int:
        return self.T - self.tau_max


@dataclass
class LagFactorState:
    theta: np.ndarray  # (N, K) child weights
    phi: np.ndarray    # (N, K) parent weights
    r: np.ndarray      # (K,) factor popularity
    a: np.ndarray      # (N,)
    b: np.ndarray      # (N,)
    d: np.ndarray      # (K,)
    e: np.ndarray      # (K,)
    c: float
    M: np.ndarray      # (N, N) latent counts
    Mk: np.ndarray     # (N, N, K) counts thinned over factors

    def edge_rates(self) -> np.ndarray:
        """q[i, j] = sum_k theta[i, k] r[k] phi[j, k]."""
        return (self.theta * self.r) @ self.phi.T

    def factor_rates(self) -> np.ndarray:
        """q[i, j, k] = theta[i, k] r[k] phi[j, k]."""
        return (self.theta * self.r)[:, None, :] * self.phi[None, :, :]


@dataclass
class PFGCGState:
    A: np.ndarray      # (tau_max, N, N) coefficients
    G: np.ndarray      # (tau_max, N, N) binary graphs, int8
    psi: np.ndarray    # (tau_max, N, N) coefficient precisions
    lam: np.ndarray    # (N,) noise precisions
    factors: list[LagFactorState]
    config: ModelConfig
    iteration: int = 0
    frozen_graph: bool = field(default=False)

    @property
    def B(self) -> np.ndarray:
        """Effective coefficients A * G."""
        return self.A * self.G

    def copy(self) -> "PFGCGState":
        return PFGCGState(
            A=self.A.copy(), G=self.G.copy(), psi=self.psi.copy(), lam=self.lam.copy(),
            factors=[LagFactorState(**{k: (v.copy() if isinstance(v, np.ndarray) else v)
                                       for k, v in vars(f).items()}) for f in self.factors],
            config=self.config, iteration=self.iteration, frozen_graph=self.frozen_graph)

    def check(self):
        """Raise ``AssertionError`` if a structural invariant is broken."""
        cfg = self.config
        assert np.all(self.psi > 0) and np.all(self.lam > 0)
        assert set(np.unique(self.G)) <= {0, 1}
        if cfg.fixed_dense_graph:
            assert np.all(self.G == 1)
        for tau, f in enumerate(self.factors):
            for name in ("theta", "phi", "r", "a", "b", "d", "e"):
                assert np.all(getattr(f, name) > 0), name
            assert f.c > 0
            assert np.array_equal(f.Mk.sum(axis=2), f.M)
            assert np.array_equal((f.M >= cfg.V).astype(np.int8), self.G[tau])

    def is_finite(self) -> bool:
        arrays = [self.A, self.psi, self.lam]
        for f in self.factors:
            arrays += [f.theta, f.phi, f.r, f.a, f.b, f.d, f.e, np.asarray(f.c)]
        return all(np.all(np.isfinite(x)) for x in arrays)


def _draw_factors(N, K, rng) -> tuple:
    """Hyperparameters and loadings from their priors."""
    a = sample_gamma(1.0, 1.0, rng, size=N)
    b = sample_gamma(1.0, 1.0, rng, size=N)
    d = sample_gamma(1.0, 1.0, rng, size=K)
    e = sample_gamma(1.0, 1.0, rng, size=K)
    c = float(sample_gamma(1.0, 1.0, rng))
    r = sample_gamma(1.0 / K, 1.0 / c, rng, size=K)
    theta = sample_gamma(a[:, None], 1.0 / d[None, :], rng, size=(N, K))
    phi = sample_gamma(b[:, None], 1.0 / e[None, :], rng, size=(N, K))
    return theta, phi, r, a, b, d, e, c


def init_state(config: ModelConfig, rng) -> PFGCGState:
    """Prior draws for every continuous variable, with all graphs switched on.

    Latent counts are then drawn consistent with the dense graphs.
    """
    N, K, L = config.N, config.K, config.tau_max
    gen = as_generator(rng)
    lam = sample_gamma(1.0, 1.0, gen, size=N)
    psi = sample_gamma(1.0, 1.0, gen, size=(L, N, N))
    A = sample_normal(0.0, 1.0 / psi, gen)
    G = np.ones((L, N, N), dtype=np.int8)
    factors = []
    for tau in range(L):
        theta, phi, r, a, b, d, e, c = _draw_factors(N, K, gen)
        f = LagFactorState(theta=theta, phi=phi, r=r, a=a, b=b, d=d, e=e, c=c,
                           M=np.zeros((N, N), dtype=np.int64),
                           Mk=np.zeros((N, N, K), dtype=np.int64))
        q = np.maximum(f.edge_rates(), TINY)
        f.M = np.asarray(gbpl.sample_count_given_edge(G[tau], q, config.V, gen))
        rates = f.factor_rates()
        f.Mk = gen.multinomial(f.M, rates / np.maximum(rates.sum(axis=2, keepdims=True), TINY))
        factors.append(f)
    return PFGCGState(A=A, G=G, psi=psi, lam=lam, factors=factors, config=config,
                      frozen_graph=config.fixed_dense_graph)


def sample_prior(config: ModelConfig, rng) -> PFGCGState:
    """Joint draw from the full prior, graphs included (forward simulation)."""
    N, K, L = config.N, config.K, config.tau_max
    gen = as_generator(rng)
    lam = sample_gamma(1.0, 1.0, gen, size=N)
    psi = sample_gamma(1.0, 1.0, gen, size=(L, N, N))
    A = sample_normal(0.0, 1.0 / psi, gen)
    G = np.ones((L, N, N), dtype=np.int8)
    factors = []
    for tau in range(L):
        theta, phi, r, a, b, d, e, c = _draw_factors(N, K, gen)
        f = LagFactorState(theta=theta, phi=phi, r=r, a=a, b=b, d=d, e=e, c=c,
                           M=None, Mk=None)
        rates = f.factor_rates()
        f.Mk = sample_poisson(rates, gen).astype(np.int64)
        f.M = f.Mk.sum(axis=2)
        if not config.fixed_dense_graph:
            G[tau] = (f.M >= config.V).astype(np.int8)
        factors.append(f)
    return PFGCGState(A=A, G=G, psi=psi, lam=lam, factors=factors, config=config,
                      frozen_graph=config.fixed_dense_graph)


def prior_edge_rate(state: PFGCGState, tau: int, i: int, j: int) -> float:
    f = state.factors[tau]
    return float(np.sum(f.theta[i] * f.r * f.phi[j]))


def save_checkpoint(state: PFGCGState, path) -> None:
    """Write the state as ``.npz`` with a JSON header holding the config."""
    header = {"format": "pfgcg-checkpoint", "version": CHECKPOINT_VERSION,
              "config": asdict(state.config), "iteration": state.iteration}
    arrays = {"A": state.A, "G": state.G, "psi": state.psi, "lam": state.lam}
    for tau, f in enumerate(state.factors):
        for name, value in vars(f).items():
            arrays[f"lag{tau}_{name}"] = np.asarray(value)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> PFGCGState:
    with np.load(Path(path)) as z:
        if "header" not in z.files:
            raise ValueError(f"{path} is not a checkpoint")
        header = json.loads(z["header"].tobytes().decode())
        if header.get("format") != "pfgcg-checkpoint":
            raise ValueError(f"{path} is not a checkpoint")
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        config = ModelConfig(**header["config"])
        factors = []
        for tau in range(config.tau_max):
            kw = {name: z[f"lag{tau}_{name}"] for name in
                  ("theta", "phi", "r", "a", "b", "d", "e", "M", "Mk")}
            kw["c"] = float(z[f"lag{tau}_c"])
            factors.append(LagFactorState(**kw))
        return PFGCGState(A=z["A"], G=z["G"], psi=z["psi"], lam=z["lam"], factors=factors,
                          config=config, iteration=header["iteration"],
                          frozen_graph=config.fixed_dense_graph)
