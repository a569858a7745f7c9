import io
import json

import numpy as np
import pytest

from pfgcg import gibbs
from pfgcg.model import ModelConfig, init_state
from pfgcg.posterior import (NumericalFailure, PosteriorAccumulator, RunSchedule,
                             StaleStatisticsError, active_factor_count, aggregate_lags,
                             merge_accumulators, posterior_edge_mean, predict_one_step,
                             predict_range, record_collection, run_chain, sample_binary_graph)
from pfgcg.samplers import RngStream


def _filled(Y, B=None, r=None):
    N, _, L, H = Y.shape
    K = 3 if r is None else r.shape[1]
    acc = PosteriorAccumulator.empty(N, L, K, H)
    acc.Y[:] = Y
    acc.n = H
    if B is not None:
        acc.B_mean[:] = B
    if r is not None:
        acc.r_mean[:] = r
    return acc


def test_schedule_defaults():
    s = RunSchedule()
    assert (s.total_iters, s.burn_in, s.thin, s.H) == (10000, 5000, 10, 500)
    hits = [it for it in range(1, s.total_iters + 1) if s.collects(it)]
    assert len(hits) == 500 and hits[0] == 5010 and hits[-1] == 10000


@pytest.mark.parametrize("args", [(100, 100, 1), (100, 150, 1), (100, 10, 0), (100, -1, 1)])
def test_schedule_validation(args):
    with pytest.raises(ValueError):
        RunSchedule(*args)


def _live(N=3, T=20, K=2, L=1, seed=0):
    g = np.random.default_rng(seed)
    X = g.standard_normal((N, T))
    s = init_state(ModelConfig(N=N, T=T, K=K, tau_max=L), RngStream(seed))
    return X, s, gibbs.make_stats(X, s)


def test_first_collection_sets_means_exactly():
    X, s, st = _live()
    gen = RngStream(0).generator
    gibbs.gibbs_sweep(s, X, st, gen)
    acc = PosteriorAccumulator.empty(3, 1, 2, 4)
    record_collection(s, st, acc, 0)
    np.testing.assert_array_equal(acc.B_mean, s.B)
    np.testing.assert_array_equal(acc.r_mean[0], s.factors[0].r)
    np.testing.assert_allclose(acc.Y[..., 0, 0], st.edge_probs[0], rtol=1e-7)


def test_running_means_match_batch():
    X, s, st = _live(N=4, K=3, L=2, T=30)
    gen = RngStream(1).generator
    acc = PosteriorAccumulator.empty(4, 2, 3, 60)
    Bs, rs = [], []
    for h in range(60):
        gibbs.gibbs_sweep(s, X, st, gen)
        record_collection(s, st, acc, h)
        Bs.append(s.B.copy())
        rs.append(np.stack([f.r for f in s.factors]))
    np.testing.assert_allclose(acc.B_mean, np.mean(Bs, axis=0), rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(acc.r_mean, np.mean(rs, axis=0), rtol=1e-12, atol=1e-300)


def test_constant_collections_give_constant_mean():
    X, s, st = _live()
    acc = PosteriorAccumulator.empty(3, 1, 2, 5)
    st.edge_probs_sweep = st.sweep
    st.edge_probs[:] = 0.25
    for h in range(5):
        record_collection(s, st, acc, h)
    np.testing.assert_allclose(acc.B_mean, s.B, rtol=1e-15)
    np.testing.assert_allclose(posterior_edge_mean(acc), 0.25)


def test_stale_edge_probs_rejected():
    X, s, st = _live()
    gen = RngStream(0).generator
    gibbs.gibbs_sweep(s, X, st, gen)
    st.sweep += 1
    with pytest.raises(StaleStatisticsError):
        record_collection(s, st, PosteriorAccumulator.empty(3, 1, 2, 2), 0)


def test_collection_index_checked():
    X, s, st = _live()
    gibbs.gibbs_sweep(s, X, st, RngStream(0))
    acc = PosteriorAccumulator.empty(3, 1, 2, 1)
    with pytest.raises(IndexError):
        record_collection(s, st, acc, 1)
    record_collection(s, st, acc, 0)
    with pytest.raises(IndexError):
        record_collection(s, st, acc, 1)


def test_Y_is_float32():
    assert PosteriorAccumulator.empty(40, 5, 50, 500).Y.dtype == np.float32


def test_edge_mean_examples():
    g = np.random.default_rng(0)
    Y = g.random((4, 4, 2, 1)).astype(np.float32)
    np.testing.assert_array_equal(posterior_edge_mean(_filled(Y)),
                                  np.transpose(Y[..., 0], (2, 0, 1)))
    np.testing.assert_allclose(posterior_edge_mean(_filled(np.full((3, 3, 2, 7), 0.5))), 0.5)
    Y = g.random((5, 5, 3, 40)).astype(np.float32)
    ref = np.zeros((3, 5, 5))
    for tau in range(3):
        for i in range(5):
            for j in range(5):
                ref[tau, i, j] = sum(float(Y[i, j, tau, h]) for h in range(40)) / 40
    np.testing.assert_allclose(posterior_edge_mean(_filled(Y)), ref, rtol=1e-12)


def test_aggregate_examples():
    g = np.random.default_rng(1)
    Y = g.random((4, 4, 1, 10)).astype(np.float32)
    acc = _filled(Y)
    np.testing.assert_allclose(aggregate_lags(acc), posterior_edge_mean(acc)[0], rtol=1e-12)
    Y = np.zeros((3, 3, 3, 6), dtype=np.float32)
    Y[:, :, 1, :] = 1.0
    np.testing.assert_array_equal(aggregate_lags(_filled(Y)), np.ones((3, 3)))
    Y = g.random((4, 4, 2, 25)).astype(np.float32)
    ref = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            ref[i, j] = sum(float(max(Y[i, j, 0, h], Y[i, j, 1, h])) for h in range(25)) / 25
    np.testing.assert_allclose(aggregate_lags(_filled(Y)), ref, rtol=1e-12)


def test_aggregate_dominates_each_lag():
    Y = np.random.default_rng(2).random((6, 6, 3, 30)).astype(np.float32)
    acc = _filled(Y)
    agg, per_lag = aggregate_lags(acc), posterior_edge_mean(acc)
    assert np.all(agg[None] >= per_lag - 1e-12)


def test_summaries_invariant_to_collection_order():
    Y = np.random.default_rng(3).random((5, 5, 2, 20)).astype(np.float32)
    perm = np.random.default_rng(4).permutation(20)
    a, b = _filled(Y), _filled(Y[..., perm])
    np.testing.assert_allclose(aggregate_lags(a), aggregate_lags(b), rtol=1e-12)
    np.testing.assert_allclose(posterior_edge_mean(a), posterior_edge_mean(b), rtol=1e-12)


def test_empty_accumulator_rejected():
    acc = PosteriorAccumulator.empty(3, 1, 2, 5)
    for fn in (posterior_edge_mean, aggregate_lags):
        with pytest.raises(ValueError):
            fn(acc)


def test_merge_pools_collections():
    g = np.random.default_rng(5)
    a = _filled(g.random((3, 3, 1, 4)).astype(np.float32), B=g.random((1, 3, 3)),
                r=g.random((1, 2)))
    b = _filled(g.random((3, 3, 1, 6)).astype(np.float32), B=g.random((1, 3, 3)),
                r=g.random((1, 2)))
    m = merge_accumulators([a, b])
    assert m.n == 10
    np.testing.assert_allclose(m.B_mean, (4 * a.B_mean + 6 * b.B_mean) / 10)
    pooled = np.concatenate([a.Y, b.Y], axis=3)[:, :, 0].astype(np.float64)
    np.testing.assert_allclose(posterior_edge_mean(m)[0], pooled.mean(axis=2))


def test_binary_graph_sampling(rng):
    assert np.all(sample_binary_graph(np.zeros((5, 5)), rng) == 0)
    assert np.all(sample_binary_graph(np.ones((5, 5)), rng) == 1)
    N = 30
    count = sample_binary_graph(np.full((N, N), 0.5), rng).sum()
    assert abs(count - N * N / 2) <= 4 * (N * N / 4) ** 0.5
    with pytest.raises(ValueError):
        sample_binary_graph(np.array([[0.5, 1.2]]), rng)


def test_predict_examples():
    X = np.random.default_rng(6).standard_normal((4, 10))
    assert np.all(predict_one_step(np.zeros((1, 4, 4)), X, 5) == 0)
    np.testing.assert_array_equal(predict_one_step(np.eye(4)[None], X, 5), X[:, 4])
    B = np.random.default_rng(7).standard_normal((3, 4, 4))
    ref = np.zeros(4)
    for tau in range(3):
        for i in range(4):
            for j in range(4):
                ref[i] += B[tau, i, j] * X[j, 6 - 1 - tau]
    np.testing.assert_allclose(predict_one_step(B, X, 6), ref, rtol=1e-12, atol=1e-12)
    with pytest.raises(ValueError):
        predict_one_step(B, X, 2)


def test_predict_range_matches_pointwise():
    X = np.random.default_rng(8).standard_normal((3, 20))
    B = np.random.default_rng(9).standard_normal((2, 3, 3))
    P = predict_range(B, X, 15)
    for k, t in enumerate(range(15, 20)):
        np.testing.assert_allclose(P[:, k], predict_one_step(B, X, t), rtol=1e-12)


def test_active_factor_count():
    acc = PosteriorAccumulator.empty(3, 2, 5, 1)
    assert list(active_factor_count(acc)) == [0, 0]
    acc.r_mean[:, 0] = 3.0
    acc.r_mean[:, 1:] = 1e-4
    assert list(active_factor_count(acc, 0.01)) == [1, 1]


def test_run_chain_outputs_and_trace():
    g = np.random.default_rng(0)
    X = g.standard_normal((3, 40))
    cfg = ModelConfig(N=3, T=32, K=4, tau_max=2)
    trace = io.StringIO()
    state, acc = run_chain(X, cfg, RunSchedule(40, 20, 5), RngStream(1), test_start=32,
                           trace=trace)
    assert acc.n == acc.H == 4
    assert len(acc.mse_trace) == 40
    lines = trace.getvalue().splitlines()
    assert len(lines) == 40
    rec = json.loads(lines[-1])
    assert rec["iteration"] == 40 and len(rec["edge_density"]) == 2
    assert set(rec) >= {"iteration", "mse", "edge_density", "active_factors"}
    state.check()


def test_dense_mode_posterior():
    g = np.random.default_rng(1)
    X = g.standard_normal((3, 40))
    cfg = ModelConfig(N=3, T=32, K=3, fixed_dense_graph=True)
    state, acc = run_chain(X, cfg, RunSchedule(30, 10, 5), RngStream(2), test_start=32)
    np.testing.assert_array_equal(aggregate_lags(acc), np.ones((3, 3)))
    assert np.all(acc.B_mean != 0)


def test_run_chain_detects_divergence():
    X = np.random.default_rng(0).standard_normal((2, 20))
    X[0, 5] = np.inf
    cfg = ModelConfig(N=2, T=20, K=2)
    with pytest.raises(NumericalFailure) as err:
        run_chain(X, cfg, RunSchedule(5, 1, 1), RngStream(0))
    assert err.value.state is not None and err.value.iteration == 1
