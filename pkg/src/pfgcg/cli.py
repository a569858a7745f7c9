"""Command-line experiment runner: ``pfgcg generate | fit | eval``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .data import (DataError, GroundTruthGraph, gen_lorenz96, gen_lotka_volterra, load_csv,
                   read_kv, read_matrix_csv, split_train_test, write_kv, write_matrix_csv,
                   write_series_csv)
from .evaluation import MetricReport, UndefinedMetricError, auprc, auroc, select_model, shd
from .gibbs import ORDERS, SCANS
from .model import ConfigError, ModelConfig, save_checkpoint
from .posterior import (NumericalFailure, RunSchedule, active_factor_count, aggregate_lags,
                        merge_accumulators, posterior_edge_mean, predict_range, run_chain,
                        sample_binary_graph)
from .samplers import RngStream

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

# Flat-file keys accepted by ``generate --config``.
GENERATOR_KEYS = {
    "model": str, "N": int, "pairs": int, "T": int, "F": float, "dt": float,
    "noise_sd": float, "seed": int, "alpha": float, "beta": float, "gamma": float,
    "delta": float, "window": int, "subsample": int,
}


def versions() -> dict:
    return {"pfgcg": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _coerce(value, typ, key):
    if typ is bool:
        if isinstance(value, bool):
            return value
        low = str(value).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        return typ(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ.__name__}") from None


def _parse_grid(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        grid = tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(f"cannot parse V grid {text!r}") from None
    if not grid:
        raise ConfigError("empty V grid")
    return grid


def _load_config_file(path) -> dict:
    try:
        return read_kv(path)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except DataError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------- generate

def resolve_generator(args) -> dict:
    settings = {"model": "lorenz96", "N": 10, "pairs": 5, "T": 500, "F": 40.0, "dt": 0.01,
            "noise_sd": 0.1, "seed": 0, "alpha": 1.1, "beta": 0.4, "gamma": 0.4,
            "delta": 0.1, "window": 1, "subsample": None}
    if args.config:
        for k, v in _load_config_file(args.config).items():
            if k not in GENERATOR_KEYS:
                raise ConfigError(f"unknown generator key {k!r}")
            settings[k] = _coerce(v, GENERATOR_KEYS[k], k)
    for k in GENERATOR_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    if settings["model"] not in ("lorenz96", "lotka_volterra"):
        raise ConfigError(f"unknown generator {settings['model']!r}")
    if settings["subsample"] is None:
        settings["subsample"] = 5 if settings["model"] == "lorenz96" else 10
    return settings


def generate_data(settings: dict):
    try:
        if settings["model"] == "lorenz96":
            return gen_lorenz96(settings["N"], settings["T"], F=settings["F"], dt=settings["dt"],
                                noise_sd=settings["noise_sd"], seed=settings["seed"],
                                subsample=settings["subsample"])
        return gen_lotka_volterra(settings["pairs"], settings["T"], alpha=settings["alpha"],
                                  beta=settings["beta"], gamma=settings["gamma"], delta=settings["delta"],
                                  window=settings["window"], dt=settings["dt"],
                                  noise_sd=settings["noise_sd"], seed=settings["seed"],
                                  subsample=settings["subsample"])
    except DataError as exc:
        raise ConfigError(str(exc)) from None


def cmd_generate(args) -> int:
    settings = resolve_generator(args)
    data, truth = generate_data(settings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_series_csv(data, out / "X.csv")
    write_matrix_csv(truth.G_true, out / "truth.csv", fmt="%d")
    if settings["model"] == "lorenz96":
        keep = ("model", "N", "T", "F", "dt", "subsample", "noise_sd", "seed")
    else:
        keep = ("model", "pairs", "T", "alpha", "beta", "gamma", "delta", "window", "dt",
                "subsample", "noise_sd", "seed")
    write_kv({k: settings[k] for k in keep}, out / "generator.kv")
    print(f"wrote {data.T} x {data.N} series to {out / 'X.csv'}")
    return EXIT_OK


# --------------------------------------------------------------------- fit

@dataclass
class ExperimentConfig:
    data: str = ""
    out: str = "run"
    tau_max: int = 1
    K: int = 50
    v_grid: tuple = (1,)
    fixed_dense_graph: bool = False
    iters: int = 10000
    burn_in: int = 5000
    thin: int = 10
    train_frac: float = 0.8
    chains: int = 1
    workers: int = 1
    seed: int = 0
    order: str = "blocked"
    scan: str = "row"
    rescale: bool = True
    standardize: bool = True
    trace: bool = True
    active_threshold: float = 0.01

    def validate(self):
        if not self.data:
            raise ConfigError("no data file given")
        if self.order not in ORDERS:
            raise ConfigError(f"order must be one of {ORDERS}")
        if self.scan not in SCANS:
            raise ConfigError(f"scan must be one of {SCANS}")
        if self.chains < 1 or self.workers < 1:
            raise ConfigError("chains and workers must be at least 1")
        if not 0.0 < self.train_frac < 1.0:
            raise ConfigError("train_frac must lie in (0, 1)")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if any(v < 1 for v in self.v_grid):
            raise ConfigError("V values must be at least 1")
        try:
            RunSchedule(self.iters, self.burn_in, self.thin)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if (self.iters - self.burn_in) // self.thin < 1:
            raise ConfigError("schedule collects no samples")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["v_grid"] = list(self.v_grid)
        return d


_FIT_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_PY_TYPES = {"str": str, "int": int, "float": float, "bool": bool}


def resolve_fit(args) -> ExperimentConfig:
    values = {}
    if args.config:
        for k, v in _load_config_file(args.config).items():
            if k == "V":
                k = "v_grid"
            if k not in _FIT_TYPES:
                raise ConfigError(f"unknown fit key {k!r}")
            if k == "v_grid":
                values[k] = _parse_grid(v)
            else:
                values[k] = _coerce(v, _PY_TYPES[_FIT_TYPES[k]], k)
    for k in _FIT_TYPES:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = _parse_grid(v) if k == "v_grid" else v
    if getattr(args, "V", None) is not None:
        values["v_grid"] = (args.V,)
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def _stream_id(V, chain):
    return 1000 * V + chain


def _chain_job(job):
    Xs, model_cfg, schedule, test_start, seed, stream, order, scan, rescale, trace_path = job
    fh = open(trace_path, "w") if trace_path else None
    try:
        return run_chain(Xs, model_cfg, schedule, RngStream(seed, stream).generator,
                         test_start=test_start, trace=fh, scan=scan, order=order,
                         rescale=rescale)
    finally:
        if fh is not None:
            fh.close()


def _standardize(X, n_train):
    mu = X[:, :n_train].mean(axis=1, keepdims=True)
    sd = X[:, :n_train].std(axis=1, keepdims=True)
    sd[sd == 0] = 1.0
    return (X - mu) / sd, mu.ravel(), sd.ravel()


def _write_run(run_dir, cfg, V, acc, Xs, n_train, states):
    run_dir.mkdir(parents=True, exist_ok=True)
    scores = aggregate_lags(acc)
    write_matrix_csv(scores, run_dir / "scores.csv")
    edge_mean = posterior_edge_mean(acc)
    for tau in range(cfg.tau_max):
        write_matrix_csv(edge_mean[tau], run_dir / f"edge_mean_lag{tau + 1}.csv")
        write_matrix_csv(acc.B_mean[tau], run_dir / f"B_mean_lag{tau + 1}.csv")
    pred = predict_range(acc.B_mean, Xs, n_train)
    mse = float(np.mean((pred - Xs[:, n_train:]) ** 2))
    np.savetxt(run_dir / "mse_trace.csv", np.asarray(acc.mse_trace), fmt="%.10g")
    active = active_factor_count(acc, cfg.active_threshold)
    # paths stay in config.json so that reports from identical runs compare equal
    run_cfg = {**cfg.to_dict(), "V": V, "data": Path(cfg.data).name}
    run_cfg.pop("out")
    report = {
        "config": run_cfg,
        "versions": versions(),
        "seeds": {"seed": cfg.seed, "streams": [_stream_id(V, c) for c in range(cfg.chains)]},
        "H": int(acc.n),
        "test_mse": mse,
        "mse_trace": [float(m) for m in acc.mse_trace],
        "active_factors": [int(a) for a in active],
        "final_edge_density": [float(s.G.mean()) for s in states],
    }
    _dump_json(report, run_dir / "report.json")
    return mse


def cmd_fit(args) -> int:
    cfg = resolve_fit(args)
    data = load_csv(cfg.data, train_frac=cfg.train_frac)
    split_train_test(data)
    n_train = data.n_train
    X = data.X
    if cfg.standardize:
        Xs, mu, sd = _standardize(X, n_train)
    else:
        Xs, mu, sd = X, np.zeros(data.N), np.ones(data.N)
    schedule = RunSchedule(cfg.iters, cfg.burn_in, cfg.thin)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    grid_mode = len(cfg.v_grid) > 1

    def run_dir(V):
        return out / f"V{V}" if grid_mode else out

    jobs, keys = [], []
    for V in cfg.v_grid:
        model_cfg = ModelConfig(N=data.N, T=n_train, tau_max=cfg.tau_max, K=cfg.K, V=V,
                                fixed_dense_graph=cfg.fixed_dense_graph, seed=cfg.seed)
        run_dir(V).mkdir(parents=True, exist_ok=True)
        for c in range(cfg.chains):
            trace = run_dir(V) / f"trace_chain{c}.jsonl" if cfg.trace else None
            jobs.append((Xs, model_cfg, schedule, n_train, cfg.seed, _stream_id(V, c),
                         cfg.order, cfg.scan, cfg.rescale, trace and str(trace)))
            keys.append((V, c))

    try:
        if cfg.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(_chain_job, jobs))
        else:
            results = [_chain_job(j) for j in jobs]
    except NumericalFailure as exc:
        dump = out / "failure_state.npz"
        if exc.state is not None:
            save_checkpoint(exc.state, dump)
        _dump_json({"error": str(exc), "iteration": exc.iteration,
                    "state_dump": dump.name if exc.state is not None else None,
                    "config": cfg.to_dict()}, out / "failure.json")
        raise

    resolved = {**cfg.to_dict(), "N": data.N, "T": data.T, "n_train": n_train,
                "standardize_mean": mu.tolist(), "standardize_sd": sd.tolist(),
                "versions": versions()}
    _dump_json(resolved, out / "config.json")

    runs = []
    for V in cfg.v_grid:
        idx = [k for k, key in enumerate(keys) if key[0] == V]
        accs = [results[k][1] for k in idx]
        acc = merge_accumulators(accs) if len(accs) > 1 else accs[0]
        if len(accs) > 1:
            acc.mse_trace = list(np.mean([a.mse_trace for a in accs], axis=0))
        mse = _write_run(run_dir(V), cfg, V, acc, Xs, n_train, [results[k][0] for k in idx])
        runs.append((V, MetricReport(auroc=None, auprc=None, shd=None, test_mse=mse)))
        print(f"V={V}: test MSE {mse:.6g}")

    best = select_model(runs)
    selection = {"selected_V": best, "criterion": "test_mse",
                 "runs": [{"V": V, "test_mse": r.test_mse, "dir": str(run_dir(V).relative_to(out))}
                          for V, r in runs]}
    _dump_json(selection, out / "selection.json")
    if grid_mode:
        src = run_dir(best)
        for name in ("scores.csv", "report.json"):
            (out / name).write_bytes((src / name).read_bytes())
    print(f"selected V={best}; scores in {out / 'scores.csv'}")
    return EXIT_OK


# -------------------------------------------------------------------- eval

def evaluate(scores, truth, seed) -> MetricReport:
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth)
    if scores.shape != truth.shape:
        raise DataError(f"score shape {scores.shape} does not match truth shape {truth.shape}")
    GroundTruthGraph(truth)
    if np.any(scores < 0) or np.any(scores > 1):
        raise DataError("scores must lie in [0, 1] to sample a binary graph")
    pred = sample_binary_graph(scores, RngStream(seed).generator)
    return MetricReport(auroc=auroc(scores, truth), auprc=auprc(scores, truth),
                        shd=shd(pred, truth), config={"seed": seed})


def cmd_eval(args) -> int:
    for p in (args.scores, args.truth):
        if not Path(p).exists():
            raise FileNotFoundError(f"file not found: {p}")
    try:
        report = evaluate(read_matrix_csv(args.scores), read_matrix_csv(args.truth), args.seed)
    except ValueError as exc:
        if isinstance(exc, (DataError, UndefinedMetricError)):
            raise
        raise DataError(str(exc)) from None
    out = report.to_dict()
    out["config"].update({"scores": Path(args.scores).name, "truth": Path(args.truth).name})
    text = json.dumps(out, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pfgcg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pfgcg {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a benchmark series and its causal graph")
    g.add_argument("--model", choices=("lorenz96", "lotka_volterra"))
    g.add_argument("--N", "-N", type=int)
    g.add_argument("--pairs", type=int)
    g.add_argument("--T", "-T", type=int)
    g.add_argument("--F", type=float)
    g.add_argument("--dt", type=float)
    g.add_argument("--noise-sd", dest="noise_sd", type=float)
    g.add_argument("--subsample", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--delta", type=float)
    g.add_argument("--window", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--config", help="flat key = value file")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="run the Gibbs sampler and write posterior summaries")
    f.add_argument("--data")
    f.add_argument("--out")
    f.add_argument("--tau-max", dest="tau_max", type=int)
    f.add_argument("-K", "--K", dest="K", type=int)
    group = f.add_mutually_exclusive_group()
    group.add_argument("-V", "--V", dest="V", type=int)
    group.add_argument("--v-grid", dest="v_grid", help="comma-separated thresholds, e.g. 1,2,3")
    f.add_argument("--fixed-dense-graph", dest="fixed_dense_graph", action="store_const",
                   const=True)
    f.add_argument("--iters", type=int)
    f.add_argument("--burn-in", dest="burn_in", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--train-frac", dest="train_frac", type=float)
    f.add_argument("--chains", type=int)
    f.add_argument("--workers", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--order", choices=ORDERS)
    f.add_argument("--scan", choices=SCANS)
    f.add_argument("--no-rescale", dest="rescale", action="store_const", const=False)
    f.add_argument("--no-standardize", dest="standardize", action="store_const", const=False)
    f.add_argument("--no-trace", dest="trace", action="store_const", const=False)
    f.add_argument("--active-threshold", dest="active_threshold", type=float)
    f.add_argument("--config", help="flat key = value file")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="score an edge-probability matrix against a true graph")
    e.add_argument("--scores", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, UndefinedMetricError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
