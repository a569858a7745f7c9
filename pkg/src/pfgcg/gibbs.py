"""One Gibbs sweep over the full model.

Per sweep: noise precisions, then for every lag the latent counts and factor
hierarchy, then a scan over the (i, j) entries sampling the coefficient, its
precision and the graph entry in turn.

The entry scan keeps, for the current row ``i``, the vector
``c[j] = sum_t resid[i, t] * x[j, t - tau]``.  When an effective coefficient
changes by ``delta`` the vector moves by ``-delta * gram[:, j]``, so each entry
costs O(N) and the row residual is refreshed once per row.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import gbpl
from .model import PFGCGState
from .samplers import TINY, as_generator, sample_crt, sample_gamma

log = logging.getLogger(__name__)

SCANS = ("row", "column", "random")
ORDERS = ("blocked", "algorithm")


@dataclass
class SweepStats:
    """Data-derived sufficient statistics plus the running residuals."""

    target: np.ndarray     # (N, T_eff) x_t for t > tau_max
    lagged: np.ndarray     # (tau_max, N, T_eff) x_{t - tau}
    U: np.ndarray          # (tau_max, N) sum_t x_{j, t-tau}^2
    gram: np.ndarray       # (tau_max, N, N) lagged @ lagged.T
    residuals: np.ndarray  # (N, T_eff)
    edge_probs: np.ndarray  # (tau_max, N, N)
    sweep: int = 0
    edge_probs_sweep: int = -1
    w_evals: int = 0
    fallbacks: int = 0

    @property
    def T_eff(self) -> int:
        return self.target.shape[1]


def lagged_design(X: np.ndarray, tau_max: int) -> tuple[np.ndarray, np.ndarray]:
    T = X.shape[1]
    target = X[:, tau_max:]
    lagged = np.stack([X[:, tau_max - tau:T - tau] for tau in range(1, tau_max + 1)])
    return target, lagged


def residuals_from_scratch(X: np.ndarray, B: np.ndarray) -> np.ndarray:
    """x_t - sum_tau B^tau x_{t-tau} over the effective time range."""
    target, lagged = lagged_design(np.asarray(X, dtype=float), B.shape[0])
    return target - np.einsum("lij,ljt->it", B, lagged)


def W_from_scratch(X: np.ndarray, B: np.ndarray) -> np.ndarray:
    """W[tau, i, j]: lag-tau regressor j against row i's partial residual."""
    target, lagged = lagged_design(np.asarray(X, dtype=float), B.shape[0])
    resid = target - np.einsum("lij,ljt->it", B, lagged)
    U = np.einsum("ljt,ljt->lj", lagged, lagged)
    return np.einsum("it,ljt->lij", resid, lagged) + B * U[:, None, :]


def make_stats(X: np.ndarray, state: PFGCGState) -> SweepStats:
    X = np.asarray(X, dtype=float)
    L = state.config.tau_max
    target, lagged = lagged_design(X, L)
    target = np.ascontiguousarray(target)
    lagged = np.ascontiguousarray(lagged)
    U = np.einsum("ljt,ljt->lj", lagged, lagged)
    gram = np.einsum("lit,ljt->lij", lagged, lagged)
    return SweepStats(target=target, lagged=lagged, U=U, gram=gram,
                      residuals=residuals_from_scratch(X, state.B),
                      edge_probs=np.full(state.G.shape, np.nan))


def coefficient_posterior(lam_i, U_j, W_ij, psi_ij, g_ij):
    """Mean and variance of A given everything else."""
    if not g_ij:
        return 0.0, 1.0 / psi_ij
    var = 1.0 / (lam_i * U_j + psi_ij)
    return var * lam_i * W_ij, var


def edge_log_odds(A, lam_i, U_j, W_ij, log_s0, log_s1_prior):
    """log s1 - log s0 for one graph entry."""
    return log_s1_prior - 0.5 * (A * A * lam_i * U_j - 2.0 * A * lam_i * W_ij) - log_s0


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


# ---------------------------------------------------------------------------
# noise precisions

def noise_precision_params(residuals: np.ndarray):
    """Gamma shape and scale for every lambda_i."""
    T_eff = residuals.shape[1]
    ss = np.einsum("it,it->i", residuals, residuals)
    return 1.0 + 0.5 * T_eff, 1.0 / (1.0 + 0.5 * ss)


def sample_noise_precisions(state, data, stats, rng):
    shape, scale = noise_precision_params(stats.residuals)
    state.lam = np.asarray(sample_gamma(shape, scale, rng, size=scale.shape))
    return state


# ---------------------------------------------------------------------------
# latent counts and the factor hierarchy

def sample_latent_counts(state, rng, tau=None):
    V = state.config.V
    for t in _lags(state, tau):
        f = state.factors[t]
        q = np.maximum(f.edge_rates(), TINY)
        f.M = np.asarray(gbpl.sample_count_given_edge(state.G[t], q, V, rng), dtype=np.int64)
    return state


def thin_counts(state, rng, tau=None):
    gen = as_generator(rng)
    for t in _lags(state, tau):
        f = state.factors[t]
        N, K = f.theta.shape
        Mk = np.zeros((N, N, K), dtype=np.int64)
        nz = f.M > 0
        if np.any(nz):
            Mk[nz] = gen.multinomial(f.M[nz], thinning_probs(f)[nz])
        f.Mk = Mk
    return state


def thinning_probs(f):
    """Normalised theta[i, k] r[k] phi[j, k] over k, computed in log space."""
    logq = (np.log(f.theta) + np.log(f.r))[:, None, :] + np.log(f.phi)[None, :, :]
    logq -= logq.max(axis=2, keepdims=True)
    p = np.exp(logq)
    return p / p.sum(axis=2, keepdims=True)


def loading_params(f, which: str):
    """Gamma (shape, scale) arrays for theta or phi given the other side."""
    if which == "theta":
        shape = f.a[:, None] + f.Mk.sum(axis=1)
        scale = 1.0 / (f.d + f.r * f.phi.sum(axis=0))
    else:
        shape = f.b[:, None] + f.Mk.sum(axis=0)
        scale = 1.0 / (f.e + f.r * f.theta.sum(axis=0))
    return shape, np.broadcast_to(scale, shape.shape)


def factor_weight_params(f):
    K = f.r.shape[0]
    shape = 1.0 / K + f.Mk.sum(axis=(0, 1))
    scale = 1.0 / (f.c + f.theta.sum(axis=0) * f.phi.sum(axis=0))
    return shape, scale


def hyper_scale_params(f):
    """Shape/scale pairs for d, e and c."""
    d = (f.a.sum() + 1.0, 1.0 / (f.theta.sum(axis=0) + 1.0))
    e = (f.b.sum() + 1.0, 1.0 / (f.phi.sum(axis=0) + 1.0))
    c = (2.0, 1.0 / (f.r.sum() + 1.0))
    return d, e, c


def hyper_a_rate(f):
    return 1.0 + np.log1p(f.r * f.phi.sum(axis=0) / f.d).sum()


def hyper_b_rate(f):
    return 1.0 + np.log1p(f.r * f.theta.sum(axis=0) / f.e).sum()


def _sample_theta(f, rng):
    shape, scale = loading_params(f, "theta")
    f.theta = sample_gamma(shape, scale, rng)


def _sample_phi(f, rng):
    shape, scale = loading_params(f, "phi")
    f.phi = sample_gamma(shape, scale, rng)


def _sample_a(f, rng):
    l = sample_crt(f.Mk.sum(axis=1), f.a[:, None], rng)
    f.a = sample_gamma(1.0 + l.sum(axis=1), 1.0 / hyper_a_rate(f), rng)


def _sample_b(f, rng):
    o = sample_crt(f.Mk.sum(axis=0), f.b[:, None], rng)
    f.b = sample_gamma(1.0 + o.sum(axis=1), 1.0 / hyper_b_rate(f), rng)


def _sample_c(f, rng):
    f.c = float(sample_gamma(2.0, 1.0 / (f.r.sum() + 1.0), rng))


def _sample_d_e_r(f, rng):
    (ds, dsc), (es, esc), _ = hyper_scale_params(f)
    f.d = sample_gamma(ds, dsc, rng)
    f.e = sample_gamma(es, esc, rng)
    shape, scale = factor_weight_params(f)
    f.r = sample_gamma(shape, scale, rng)


def sample_factor_loadings(state, rng, tau=None):
    for t in _lags(state, tau):
        _sample_theta(state.factors[t], rng)
        _sample_phi(state.factors[t], rng)
    return state


def sample_factor_weights(state, rng, tau=None):
    for t in _lags(state, tau):
        f = state.factors[t]
        shape, scale = factor_weight_params(f)
        f.r = sample_gamma(shape, scale, rng)
    return state


def sample_hyper_a_b(state, rng, tau=None):
    for t in _lags(state, tau):
        _sample_a(state.factors[t], rng)
        _sample_b(state.factors[t], rng)
    return state


def sample_hyper_d_e_c(state, rng, tau=None):
    for t in _lags(state, tau):
        f = state.factors[t]
        (ds, dsc), (es, esc), _ = hyper_scale_params(f)
        f.d = sample_gamma(ds, dsc, rng)
        f.e = sample_gamma(es, esc, rng)
        _sample_c(f, rng)
    return state


def log_graph_likelihood(G, q, V):
    """log P(G | q) with the latent counts summed out."""
    log_s0, log_s1 = gbpl.log_edge_prior(np.maximum(q, TINY), V)
    return float(np.sum(np.where(G.astype(bool), log_s1, log_s0)))


def rescale_log_ratio(f, G, V, scale):
    """Log acceptance ratio for multiplying every r[k] by ``scale``.

    The Gamma(1/K, 1/c) densities give scale**(1 - K) * exp(-c (scale - 1) sum r)
    and moving K coordinates together contributes a scale**K Jacobian.
    """
    q = f.edge_rates()
    log_ratio = math.log(scale) - f.c * (scale - 1.0) * f.r.sum()
    return log_ratio + log_graph_likelihood(G, q * scale, V) - log_graph_likelihood(G, q, V)


def rescale_factor_weights(state, rng, tau, step=0.5):
    """Metropolis move multiplying every r[k] of one lag by a common factor.

    The latent counts are summed out of the target, so the move must be
    followed by a fresh draw of the counts.  It lets the overall edge-rate
    scale move freely instead of tracking the current counts.
    """
    gen = as_generator(rng)
    f = state.factors[tau]
    scale = math.exp(step * gen.standard_normal())
    if math.log(1.0 - gen.random()) < rescale_log_ratio(f, state.G[tau], state.config.V, scale):
        f.r = np.maximum(f.r * scale, TINY)
        return True
    return False


def sample_factor_hierarchy(state, rng, tau, order="blocked", rescale=True):
    """Counts, then c, a, b, d, e, r, theta, phi for one lag.

    The default ``order="blocked"`` samples theta right after a and phi right
    after b.  The a and b updates integrate their loadings out, so the
    loadings must be refreshed before anything else conditions on them.
    ``order="algorithm"`` keeps the reference sequence (a, b, then d, e, r,
    then theta, phi), which leaves a small bias in the graph marginals.
    ``rescale`` prepends :func:`rescale_factor_weights`.
    """
    if rescale:
        rescale_factor_weights(state, rng, tau)
    sample_latent_counts(state, rng, tau)
    thin_counts(state, rng, tau)
    f = state.factors[tau]
    _sample_c(f, rng)
    if order == "algorithm":
        _sample_a(f, rng)
        _sample_b(f, rng)
        _sample_d_e_r(f, rng)
        _sample_theta(f, rng)
        _sample_phi(f, rng)
    elif order == "blocked":
        _sample_a(f, rng)
        _sample_theta(f, rng)
        _sample_b(f, rng)
        _sample_phi(f, rng)
        _sample_d_e_r(f, rng)
    else:
        raise ValueError(f"unknown update order {order!r}")


# ---------------------------------------------------------------------------
# coefficients, precisions and graph entries

def sample_coefficient_precisions(state, rng):
    state.psi = np.asarray(sample_gamma(1.5, 1.0 / (0.5 * state.A ** 2 + 1.0), rng,
                                        size=state.A.shape))
    return state


def _entry_order(N, scan, gen):
    if scan == "row":
        return [(i, j) for i in range(N) for j in range(N)]
    if scan == "column":
        return [(i, j) for j in range(N) for i in range(N)]
    if scan == "random":
        perm = gen.permutation(N * N)
        return [(int(k) // N, int(k) % N) for k in perm]
    raise ValueError(f"unknown scan {scan!r}")


def sample_lag_entries(state, stats, tau, rng, do_A=True, do_psi=True, do_G=True,
                       scan="row"):
    """Scan the (i, j) entries of one lag, updating A, psi and G in turn."""
    gen = as_generator(rng)
    cfg = state.config
    N = cfg.N
    do_G = do_G and not state.frozen_graph
    z = gen.standard_normal((N, N))
    gpsi = gen.standard_gamma(1.5, size=(N, N))
    u = gen.random((N, N))
    if do_G:
        log_s0, log_s1 = gbpl.log_edge_prior(state.factors[tau].edge_rates(), cfg.V)
        log_s0, log_s1 = log_s0.tolist(), log_s1.tolist()
    A, G, psi = state.A[tau], state.G[tau], state.psi[tau]
    lagged, gram = stats.lagged[tau], stats.gram[tau]
    U = stats.U[tau].tolist()
    lam = state.lam.tolist()
    probs = stats.edge_probs[tau]
    z, gpsi, u = z.tolist(), gpsi.tolist(), u.tolist()
    rowwise = scan == "row"

    order = _entry_order(N, scan, gen)
    row_c = None
    row_delta = None
    current_row = -1
    for i, j in order:
        if rowwise and i != current_row:
            if current_row >= 0:
                _flush_row(stats, lagged, current_row, row_delta)
            current_row = i
            row_c = lagged @ stats.residuals[i]
            row_delta = np.zeros(N)
        a_old = float(A[i, j])
        g_old = int(G[i, j])
        b_old = a_old * g_old
        if rowwise:
            w = float(row_c[j]) + b_old * U[j]
        else:
            w = float(stats.residuals[i] @ lagged[j]) + b_old * U[j]
        stats.w_evals += 1
        li = lam[i]
        a_new = a_old
        if do_A:
            if g_old:
                prec = li * U[j] + float(psi[i, j])
                a_new = li * w / prec + z[i][j] / math.sqrt(prec)
            else:
                a_new = z[i][j] / math.sqrt(float(psi[i, j]))
            A[i, j] = a_new
        if do_psi:
            psi[i, j] = max(gpsi[i][j] / (0.5 * a_new * a_new + 1.0), TINY)
        g_new = g_old
        if do_G:
            x = edge_log_odds(a_new, li, U[j], w, log_s0[i][j], log_s1[i][j])
            if math.isnan(x):
                stats.fallbacks += 1
                log.warning("edge (%d, %d, %d): degenerate weights, using prior", tau, i, j)
                p = math.exp(log_s1[i][j])
            else:
                p = _sigmoid(x)
            probs[i, j] = p
            g_new = 1 if u[i][j] < p else 0
            G[i, j] = g_new
        delta = a_new * g_new - b_old
        if delta != 0.0:
            if rowwise:
                row_c -= delta * gram[:, j]
                row_delta[j] += delta
            else:
                stats.residuals[i] -= delta * lagged[j]
    if rowwise and current_row >= 0:
        _flush_row(stats, lagged, current_row, row_delta)
    if state.frozen_graph:
        probs[:] = 1.0
    elif do_G:
        _refresh_flipped_counts(state, tau, gen)
    return state


def _refresh_flipped_counts(state, tau, gen):
    """Redraw M and its thinning where the graph no longer matches M >= V."""
    f = state.factors[tau]
    V = state.config.V
    stale = (f.M >= V) != state.G[tau].astype(bool)
    if not np.any(stale):
        return
    q = np.maximum(f.edge_rates()[stale], TINY)
    f.M[stale] = gbpl.sample_count_given_edge(state.G[tau][stale], q, V, gen)
    f.Mk[stale] = gen.multinomial(f.M[stale], thinning_probs(f)[stale])


def _flush_row(stats, lagged, i, row_delta):
    if np.any(row_delta):
        stats.residuals[i] -= row_delta @ lagged


def sample_coefficients(state, data, stats, rng, scan="row"):
    for tau in range(state.config.tau_max):
        sample_lag_entries(state, stats, tau, rng, do_A=True, do_psi=False, do_G=False,
                           scan=scan)
    return state


def sample_graphs(state, data, stats, rng, scan="row"):
    if state.frozen_graph:
        stats.edge_probs[:] = 1.0
    else:
        for tau in range(state.config.tau_max):
            sample_lag_entries(state, stats, tau, rng, do_A=False, do_psi=False, do_G=True,
                               scan=scan)
    stats.edge_probs_sweep = stats.sweep
    return state


def gibbs_sweep(state, data, stats, rng, scan="row", order="blocked", rescale=True):
    """One full sweep; mutates and returns ``state``.

    With ``order="algorithm"``, ``rescale=False`` and the row scan this is
    exactly the reference update sequence.
    """
    gen = as_generator(rng)
    sample_noise_precisions(state, data, stats, gen)
    for tau in range(state.config.tau_max):
        sample_factor_hierarchy(state, gen, tau, order=order, rescale=rescale)
        sample_lag_entries(state, stats, tau, gen, scan=scan)
    state.iteration += 1
    stats.sweep += 1
    stats.edge_probs_sweep = stats.sweep
    return state


def _lags(state, tau):
    return range(state.config.tau_max) if tau is None else (tau,)
