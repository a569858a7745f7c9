"""Bayesian Granger-causal graph inference with a Poisson-factorised graph prior."""

__version__ = "0.1.0"

from .data import GroundTruthGraph, TimeSeriesData, gen_lorenz96, gen_lotka_volterra, load_csv
from .evaluation import MetricReport, auprc, auroc, select_model, shd
from .gibbs import gibbs_sweep, make_stats
from .model import LagFactorState, ModelConfig, PFGCGState, init_state, sample_prior
from .posterior import (PosteriorAccumulator, RunSchedule, aggregate_lags, posterior_edge_mean,
                        predict_one_step, run_chain)
from .samplers import RngStream

__all__ = [
    "GroundTruthGraph", "LagFactorState", "MetricReport", "ModelConfig", "PFGCGState",
    "PosteriorAccumulator", "RngStream", "RunSchedule", "TimeSeriesData", "aggregate_lags",
    "auprc", "auroc", "gen_lorenz96", "gen_lotka_volterra", "gibbs_sweep", "init_state",
    "load_csv", "make_stats", "posterior_edge_mean", "predict_one_step", "run_chain",
    "sample_prior", "select_model", "shd",
]
