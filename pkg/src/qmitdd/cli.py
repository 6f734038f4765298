"""Batch experiments: ``qmitdd <experiment> --config FILE [--seed S] [--parallel K] [--out DIR]``.

Precedence, lowest first: built-in defaults, the config file, ``--set key=value``
pairs, then the dedicated ``--seed`` flag. ``--parallel`` and ``--out`` only
affect where and how fast results are produced, never their content.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib.resources import files
from pathlib import Path

import numpy as np
from scipy import stats

from . import ddsolver, qdistance, zne
from .config import ConfigError, parse_kv
from .estimation import SamplingMode, SamplingPolicy, sample_counts, stream
from .materialdb import KdTree, MaterialDatabase, RambergOsgoodParams, generate_db, tangent_scaling
from .noisemodel import OSAKA, CalibrationError, DeviceCalibration, build_noise_model

log = logging.getLogger("qmitdd")

EXPERIMENTS = ("dist-bench", "zne-bench", "nm-sweep", "fold-sweep", "truss", "dbsize-sweep", "sampling-check")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

# stream namespaces, so tasks of different kinds never share random numbers
_PAIRS, _SAMPLE, _RAW, _TRUSS, _DRAWS = range(5)


def _int(v: str) -> int:
    x = float(v)
    if not x.is_integer():
        raise ValueError(f"{v!r} is not an integer")
    return int(x)


def _ints(v: str) -> list[int]:
    return [_int(x) for x in v.split(",") if x.strip()]


def _words(v: str) -> list[str]:
    return [x.strip().lower() for x in v.split(",") if x.strip()]


def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{v!r} is not a boolean")


@dataclass
class ExperimentConfig:
    experiment: str = "dist-bench"
    seed: int = 0
    algorithm: list[str] = field(default_factory=lambda: ["swap", "h"])
    model: list[str] = field(default_factory=lambda: ["linear", "quadratic", "exponential", "richardson"])
    n: int = 6
    n_values: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    n_m: int = 10**4
    n_m_values: list[int] = field(default_factory=lambda: [10**6, 10**7, 10**8, 10**9, 10**10])
    D: int = 6
    pairs: int = 1000
    d_max: float = 4.0
    noise: bool = True
    calibration: str = "osaka"
    sampling: str = "auto"
    truss: str = "roof_truss"
    database: str = ""
    E: float = 1e4
    alpha: float = 0.5
    sigma0: float = 5.0
    beta: float = 3.0
    sigma_min: float = -6.0
    sigma_max: float = 6.0
    N: int = 161
    N_values: list[int] = field(default_factory=lambda: [21, 41, 81, 161, 321])
    scaling: str = "tangent"
    backends: list[str] = field(default_factory=lambda: ["classical", "unmitigated", "mitigated"])
    max_iter: int = ddsolver.MAX_ITER
    leaf_size: int = 8
    p: float = 0.3
    draws: int = 20000
    timing_n_m: list[int] = field(default_factory=lambda: [10**4, 10**8, 10**12])

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# field annotations are strings under postponed evaluation
_PARSERS = {"int": _int, "float": float, "str": str, "bool": _bool, "list[int]": _ints, "list[str]": _words}


def _field_parser(f):
    return _PARSERS[f.type]


# per-experiment defaults, applied before the config file
EXPERIMENT_DEFAULTS = {
    "zne-bench": {"n_m": "1e8", "pairs": "200"},
    "nm-sweep": {"pairs": "200"},
    "fold-sweep": {"n_m": "1e8", "pairs": "200"},
    "truss": {"n": "5", "n_m": "1e10", "algorithm": "h", "model": "richardson"},
    "dbsize-sweep": {"n": "5", "n_m": "1e10", "algorithm": "h", "model": "richardson",
                     "backends": "classical"},
}


def build_config(experiment: str, values: dict[str, str]) -> ExperimentConfig:
    known = {f.name: f for f in fields(ExperimentConfig)}
    kwargs = {"experiment": experiment}
    for key, raw in {**EXPERIMENT_DEFAULTS.get(experiment, {}), **values}.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "experiment":
            if raw != experiment:
                raise ConfigError(f"config is for {raw!r}, command line asks for {experiment!r}")
            continue
        try:
            kwargs[key] = _field_parser(known[key])(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    cfg = ExperimentConfig(**kwargs)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}")
    if cfg.n_m < 1 or min(cfg.n_m_values + cfg.timing_n_m, default=1) < 1:
        raise ConfigError("n_m must be at least 1")
    if cfg.D < 2:
        raise ConfigError("D must be at least 2")
    if cfg.pairs < 1 or cfg.draws < 2:
        raise ConfigError("pairs must be >= 1 and draws >= 2")
    if cfg.n < 0 or min(cfg.n_values, default=0) < 0:
        raise ConfigError("folding numbers must be non-negative")
    if not 0 <= cfg.p <= 1:
        raise ConfigError("p must lie in [0, 1]")
    if cfg.N < 2 or min(cfg.N_values, default=2) < 2:
        raise ConfigError("databases need at least 2 points")
    for a in cfg.algorithm:
        if a not in ("swap", "h"):
            raise ConfigError(f"unknown algorithm {a!r}")
    for m in cfg.model:
        if m not in {x.value for x in zne.Model}:
            raise ConfigError(f"unknown extrapolation model {m!r}")
    for b in cfg.backends:
        if b not in ("classical", "unmitigated", "mitigated"):
            raise ConfigError(f"unknown backend {b!r}")
    if cfg.sampling not in ("off", *(m.value for m in SamplingMode)):
        raise ConfigError(f"unknown sampling mode {cfg.sampling!r}")
    if cfg.scaling != "tangent":
        try:
            if float(cfg.scaling) <= 0:
                raise ValueError
        except ValueError:
            raise ConfigError("scaling must be 'tangent' or a positive number") from None
    calibration(cfg)
    if cfg.experiment in ("truss", "dbsize-sweep"):
        truss_model(cfg)
        if cfg.database and not Path(cfg.database).is_file():
            raise ConfigError(f"database file {cfg.database!r} not found")


def calibration(cfg: ExperimentConfig) -> DeviceCalibration | None:
    if not cfg.noise:
        return None
    if cfg.calibration == "osaka":
        return OSAKA
    try:
        return DeviceCalibration.from_file(cfg.calibration)
    except (OSError, CalibrationError, ConfigError, ValueError) as exc:
        raise ConfigError(f"calibration {cfg.calibration!r}: {exc}") from None


def truss_model(cfg: ExperimentConfig) -> ddsolver.TrussModel:
    path = files("qmitdd") / "data" / "roof_truss.txt" if cfg.truss == "roof_truss" else Path(cfg.truss)
    try:
        return ddsolver.parse_truss(path.read_text())
    except OSError as exc:
        raise ConfigError(f"truss file: {exc}") from None
    except ddsolver.TrussFileError as exc:
        raise ConfigError(f"truss file {cfg.truss!r}: {exc}") from None


# --- worker side --------------------------------------------------------

_NOISE_CACHE: dict = {}


def _noise(cal):
    if cal is None:
        return None
    if cal not in _NOISE_CACHE:
        _NOISE_CACHE[cal] = build_noise_model(cal)
    return _NOISE_CACHE[cal]


def _series_task(args):
    """Exact probabilities for 0..n folds of one (algorithm, pair) circuit."""
    alg, V, Vp, n, cal = args
    try:
        circ = qdistance.basis_circuit(alg, V, Vp)
        return zne.exact_series(circ, n, _noise(cal)), ""
    except Exception as exc:  # noqa: BLE001 - recorded per row
        return None, f"{type(exc).__name__}: {exc}"


def _map(fn, tasks, parallel: int):
    if parallel <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * parallel))))


# --- experiments ----------------------------------------------------------


@dataclass
class Result:
    tables: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


def _pairs(cfg):
    return qdistance.random_pairs(cfg.pairs, cfg.D, stream(cfg.seed, _PAIRS), cfg.d_max)


def _exact_series(cfg, n, parallel):
    V, Vp = _pairs(cfg)
    cal = calibration(cfg)
    tasks = [(a, V[i], Vp[i], n, cal) for a in cfg.algorithm for i in range(cfg.pairs)]
    out = _map(_series_task, tasks, parallel)
    return V, Vp, {a: out[k * cfg.pairs:(k + 1) * cfg.pairs] for k, a in enumerate(cfg.algorithm)}


def _sample(p, n_m, mode, *key):
    if mode == "off":
        return np.asarray(p, dtype=float)
    policy = SamplingPolicy(n_m, mode)
    return sample_counts(p, policy, stream(*key)) / policy.n_m


def _raw_estimate(cfg, alg, ai, i, V, Vp, p_series, n_m, tag=0):
    p_hat = float(_sample(p_series[:1], n_m, cfg.sampling, cfg.seed, _RAW, ai, i, tag)[0])
    return p_hat, qdistance.distance_from_p(alg, p_hat, V, Vp)


def _mitigated(cfg, alg, ai, i, V, Vp, p_series, n_m, models, tag=0):
    p_hat = _sample(p_series, n_m, cfg.sampling, cfg.seed, _SAMPLE, ai, i, tag)
    series = zne.ProbabilitySeries(zne.fold_scales(len(p_series) - 1), p_hat, n_m)
    out = {}
    for m in models:
        fit = zne.fit_extrapolation(series, m)
        out[m] = (fit, zne.to_estimate(alg, fit.p_zero, V, Vp, n_m, 0.0))
    return out


def run_dist_bench(cfg, parallel):
    V, Vp, series = _exact_series(cfg, 0, parallel)
    d = np.array([qdistance.squared_distance(a, b) for a, b in zip(V, Vp)])
    header = ["pair", "algorithm", "lambda", "d", "d_hat", "p_hat", "error"]
    rows, summary = [], {}
    for ai, alg in enumerate(cfg.algorithm):
        est = []
        for i, (p, err) in enumerate(series[alg]):
            if p is None:
                rows.append([i, alg, 1, d[i], "", "", err])
                continue
            p_hat, d_hat = _raw_estimate(cfg, alg, ai, i, V[i], Vp[i], p, cfg.n_m)
            est.append((i, d_hat))
            rows.append([i, alg, 1, d[i], d_hat, p_hat, ""])
        idx = [i for i, _ in est]
        summary[alg] = {"nrmse": qdistance.nrmse([x for _, x in est], d[idx]) if est else None,
                        "failed": cfg.pairs - len(est)}
    return Result({"rows": (header, rows)}, summary)


def _sweep(cfg, parallel, n_max, grid):
    """Shared body of zne-bench, nm-sweep and fold-sweep.

    ``grid`` lists (n_m, n) settings; each setting samples the same exact
    series truncated to n folds.
    """
    V, Vp, series = _exact_series(cfg, n_max, parallel)
    d = np.array([qdistance.squared_distance(a, b) for a, b in zip(V, Vp)])
    header = ["pair", "algorithm", "model", "n", "n_m", "d", "d_hat", "fallback", "clamped", "error"]
    rows, summary = [], []
    for ai, alg in enumerate(cfg.algorithm):
        for gi, (n_m, n) in enumerate(grid):
            est = {m: [] for m in ["unmitigated", *cfg.model]}
            ok = []
            for i, (p, err) in enumerate(series[alg]):
                if p is None:
                    rows.append([i, alg, "", n, n_m, d[i], "", "", "", err])
                    continue
                ok.append(i)
                _, raw = _raw_estimate(cfg, alg, ai, i, V[i], Vp[i], p, n_m, gi)
                est["unmitigated"].append(raw)
                rows.append([i, alg, "unmitigated", n, n_m, d[i], raw, 0, 0, ""])
                for m, (fit, e) in _mitigated(cfg, alg, ai, i, V[i], Vp[i], p[: n + 1], n_m,
                                              cfg.model, gi).items():
                    est[m].append(e.d_hat)
                    rows.append([i, alg, m, n, n_m, d[i], e.d_hat, int(fit.fallback), int(e.clamped), ""])
            for m, vals in est.items():
                summary.append({"algorithm": alg, "model": m, "n": n, "n_m": n_m,
                                "nrmse": qdistance.nrmse(vals, d[ok]) if ok else None})
    return Result({"rows": (header, rows)}, {"nrmse": summary})


def run_zne_bench(cfg, parallel):
    return _sweep(cfg, parallel, cfg.n, [(cfg.n_m, cfg.n)])


def run_nm_sweep(cfg, parallel):
    return _sweep(cfg, parallel, cfg.n, [(nm, cfg.n) for nm in cfg.n_m_values])


def run_fold_sweep(cfg, parallel):
    return _sweep(cfg, parallel, max(cfg.n_values), [(cfg.n_m, n) for n in cfg.n_values])


def _database(cfg, N=None):
    ro = RambergOsgoodParams(cfg.E, cfg.alpha, cfg.sigma0, cfg.beta)
    C = tangent_scaling(ro, max(abs(cfg.sigma_min), abs(cfg.sigma_max))) if cfg.scaling == "tangent" \
        else float(cfg.scaling)
    if cfg.database and N is None:
        return ro, MaterialDatabase.load(cfg.database, C)
    return ro, generate_db(ro, cfg.sigma_min, cfg.sigma_max, N or cfg.N, scaling=C)


def _backend(cfg, name):
    if name == "classical":
        return ddsolver.ClassicalBackend()
    noise = _noise(calibration(cfg))
    folds = cfg.n if name == "mitigated" else None
    model = cfg.model[-1] if len(cfg.model) == 1 else zne.Model.RICHARDSON
    return ddsolver.QuantumBackend(noise, cfg.n_m, cfg.seed, folds=folds, model=model,
                                   algorithm=cfg.algorithm[-1] if len(cfg.algorithm) == 1 else "h",
                                   sampling="auto" if cfg.sampling == "off" else cfg.sampling)


def _truss_task(args):
    cfg, name, N, leaf = args
    truss = truss_model(cfg)
    ro, db = _database(cfg, N)
    tree = KdTree(db.scaled(), leaf_size=leaf)
    t0 = time.perf_counter()
    try:
        rep = ddsolver.solve(truss, db, _backend(cfg, name), stream(cfg.seed, _TRUSS),
                             max_iter=cfg.max_iter, tree=tree)
    except Exception as exc:  # noqa: BLE001
        return name, N, None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0
    return name, N, rep, "", time.perf_counter() - t0


def _rms_or_na(sigma, ref, w):
    v = ddsolver.rms_stress_error(sigma, ref, w)
    return "n/a" if np.isnan(v) else v


def run_truss(cfg, parallel):
    truss = truss_model(cfg)
    ro, db = _database(cfg)
    ref, _ = ddsolver.reference_solution(truss, ro)
    w = truss.volumes()
    results = _map(_truss_task, [(cfg, b, None, cfg.leaf_size) for b in cfg.backends], parallel)
    it_rows, bar_rows, summary, timings = [], [], {"scaling": float(db.scaling[0, 0])}, {}
    for name, _, rep, err, dt in results:
        timings[name] = dt
        if rep is None:
            summary[name] = {"error": err}
            continue
        it_rows += [[name, k + 1, F] for k, F in enumerate(rep.distances)]
        bar_rows += [[name, truss.bar_ids[e], ref[e], rep.stresses[e], rep.admissible_stresses[e],
                      int(rep.assignments[e])] for e in range(truss.n_bars)]
        summary[name] = {"sigma_rms": _rms_or_na(rep.stresses, ref, w), "converged": rep.converged,
                         "iterations": rep.iterations, "mean_distance_calls": rep.mean_calls}
    return Result({
        "iterations": (["backend", "iteration", "global_distance"], it_rows),
        "bars": (["backend", "bar", "sigma_ref", "sigma", "sigma_admissible", "data_index"], bar_rows),
    }, summary, timings)


def run_dbsize_sweep(cfg, parallel):
    truss = truss_model(cfg)
    ro, _ = _database(cfg)
    ref, _ = ddsolver.reference_solution(truss, ro)
    w = truss.volumes()
    tasks = [(cfg, b, N, leaf) for N in cfg.N_values for b in cfg.backends for leaf in (cfg.leaf_size, N)]
    rows, summary = [], []
    for (_, name, N, leaf), (_, _, rep, err, _) in zip(tasks, _map(_truss_task, tasks, parallel)):
        search = "full" if leaf == N else "kdtree"
        if rep is None:
            rows.append([N, name, search, "", "", "", err])
            continue
        rms = _rms_or_na(rep.stresses, ref, w)
        rows.append([N, name, search, rms, rep.mean_calls, int(rep.converged), ""])
        summary.append({"N": N, "backend": name, "search": search, "sigma_rms": rms,
                        "mean_distance_calls": rep.mean_calls})
    header = ["N", "backend", "search", "sigma_rms", "mean_distance_calls", "converged", "error"]
    return Result({"rows": (header, rows)}, {"sweep": summary})


def sampling_draws(p, n_m, draws, seed):
    """Counts from the exact binomial and from the normal approximation."""
    ps = np.full(draws, p)
    exact = sample_counts(ps, SamplingPolicy(n_m, SamplingMode.EXACT), stream(seed, _DRAWS, 0))
    normal = sample_counts(ps, SamplingPolicy(n_m, SamplingMode.NORMAL), stream(seed, _DRAWS, 1))
    return exact, normal


def ks_critical(n1: int, n2: int, alpha: float = 0.01) -> float:
    c = np.sqrt(-0.5 * np.log(alpha / 2))
    return float(c * np.sqrt((n1 + n2) / (n1 * n2)))


def sampling_timing(p, n_m_values, draws, seed, repeats=5):
    out = {}
    for mode in (SamplingMode.NORMAL, SamplingMode.EXACT):
        for n_m in n_m_values:
            policy = SamplingPolicy(n_m, mode)
            best = np.inf
            for r in range(repeats):
                rng = stream(seed, _DRAWS, 2, r)
                t0 = time.perf_counter()
                sample_counts(np.full(draws, p), policy, rng)
                best = min(best, time.perf_counter() - t0)
            out[f"{mode.value}:{n_m}"] = best
    return out


def run_sampling_check(cfg, parallel):
    exact, normal = sampling_draws(cfg.p, cfg.n_m, cfg.draws, cfg.seed)
    ks = stats.ks_2samp(exact, normal)
    crit = ks_critical(cfg.draws, cfg.draws)
    rows = [[k, int(a), int(b)] for k, (a, b) in enumerate(zip(exact, normal))]
    summary = {"p": cfg.p, "n_m": cfg.n_m, "draws": cfg.draws, "ks_statistic": float(ks.statistic),
               "ks_critical_1pct": crit, "passes": bool(ks.statistic < crit)}
    timings = sampling_timing(cfg.p, cfg.timing_n_m, cfg.draws, cfg.seed)
    return Result({"rows": (["draw", "binomial", "normal"], rows)}, summary, timings)


RUNNERS = {
    "dist-bench": run_dist_bench, "zne-bench": run_zne_bench, "nm-sweep": run_nm_sweep,
    "fold-sweep": run_fold_sweep, "truss": run_truss, "dbsize-sweep": run_dbsize_sweep,
    "sampling-check": run_sampling_check,
}


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def write_outputs(res: Result, cfg: ExperimentConfig, out: Path, elapsed: float) -> None:
    out.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest()
    for name, (header, rows) in res.tables.items():
        with open(out / f"{name}.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["config_hash", "seed", *header])
            for r in rows:
                wr.writerow([digest, cfg.seed, *(_fmt(x) for x in r)])
    summary = {"experiment": cfg.experiment, "config_hash": digest, "seed": cfg.seed,
               "config": asdict(cfg), "results": res.summary}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=_fmt) + "\n")
    timings = {"config_hash": digest, "total_seconds": elapsed, **res.timings}
    (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")


def parse_args(argv):
    ap = argparse.ArgumentParser(prog="qmitdd", description=__doc__.splitlines()[0])
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", type=Path, help="key = value file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--parallel", type=int, default=1, help="worker processes (default 1)")
    ap.add_argument("--out", type=Path, help="output directory (default results/<experiment>)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config value; repeatable")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap.parse_args(argv)


def load_config(args) -> ExperimentConfig:
    values: dict[str, str] = {}
    if args.config is not None:
        try:
            values = parse_kv(args.config.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = value.strip()
    if args.seed is not None:
        values["seed"] = str(args.seed)
    return build_config(args.experiment, values)


def main(argv=None) -> int:
    args = parse_args(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.parallel < 1:
            raise ConfigError("--parallel must be at least 1")
    except ConfigError as exc:
        print(f"qmitdd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or Path("results") / cfg.experiment
    t0 = time.perf_counter()
    try:
        res = RUNNERS[cfg.experiment](cfg, args.parallel)
        write_outputs(res, cfg, out, time.perf_counter() - t0)
    except ConfigError as exc:
        print(f"qmitdd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("run failed", exc_info=True)
        print(f"qmitdd: {cfg.experiment} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"qmitdd: wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
