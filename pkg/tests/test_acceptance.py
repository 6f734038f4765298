"""End-to-end checks of the headline numerical claims, one test per criterion.

Each test prints a single ``criterion k: PASS|FAIL ...`` line; the lines are
also gathered into the pytest terminal summary.
"""

from __future__ import annotations

import time

import numpy as np
import pytest
from scipy import stats

from qmitdd import cli, ddsolver, qdistance as qd, zne
from qmitdd.circuit import Circuit
from qmitdd.estimation import SamplingMode, SamplingPolicy, sample_counts, stream
from qmitdd.materialdb import KdTree, RambergOsgoodParams, brute_force_nearest, generate_db, tangent_scaling
from qmitdd.noisemodel import build_noise_model, depolarizing_noise_model
from qmitdd.qsim import run_circuit
from qmitdd.transpile import decompose, fold

pytestmark = pytest.mark.slow


def test_criterion_1_noiseless_fidelity(record):
    t0 = time.perf_counter()
    V, Vp = qd.random_pairs(1000, 6, np.random.default_rng(101))
    worst = 0.0
    for alg in qd.Algorithm:
        for a, b in zip(V, Vp):
            p = run_circuit(qd.basis_circuit(alg, a, b))[1]
            d = qd.squared_distance(a, b)
            worst = max(worst, abs(qd.distance_from_p(alg, p, a, b) - d) / max(d, 1e-300))
    dt = time.perf_counter() - t0
    record(1, worst < 1e-9 and dt < 60, f"max relative error {worst:.2e}, {dt:.1f}s")


def test_criterion_2_sampling_error_law(record):
    n_m, trials = 10**4, 1000
    rng = np.random.default_rng(202)
    V, Vp = qd.random_pairs(8, 6, rng)
    worst = 0.0
    for alg in qd.Algorithm:
        policy = SamplingPolicy(n_m, SamplingMode.EXACT)
        for k, (a, b) in enumerate(zip(V, Vp)):
            p = qd.ideal_probability(alg, a, b)
            p_hat = sample_counts(np.full(trials, p), policy, stream(202, k, len(alg.value))) / n_m
            d_hat = np.array([qd.distance_from_p(alg, x, a, b) for x in p_hat])
            emp = np.sqrt(np.mean((d_hat - qd.squared_distance(a, b)) ** 2))
            worst = max(worst, abs(emp / qd.theoretical_rmse(alg, a, b, n_m) - 1))
    ordered = True
    for _ in range(10**4):
        D = int(rng.integers(2, 13))
        a, b = rng.normal(size=D) * rng.uniform(0.05, 5), rng.normal(size=D)
        ordered &= qd.theoretical_rmse("h", a, b, n_m) <= qd.theoretical_rmse("swap", a, b, n_m) * (1 + 1e-12)
    record(2, worst < 0.2 and ordered, f"worst relative RMSE mismatch {worst:.3f}, eps_h <= eps_s: {ordered}")


def test_criterion_3_noise_degradation(record):
    cfg = cli.build_config("dist-bench", {"n_m": "1e4", "pairs": "1000", "seed": "303"})
    noiseless = cli.build_config("dist-bench", {"n_m": "1e4", "pairs": "1000", "seed": "303", "noise": "false"})
    noisy = cli.run_dist_bench(cfg, 1).summary
    clean = cli.run_dist_bench(noiseless, 1).summary
    vals = {a: noisy[a]["nrmse"] for a in cfg.algorithm}
    ok = all(0.05 <= v <= 0.30 for v in vals.values())
    ok &= all(clean[a]["nrmse"] < 0.05 for a in cfg.algorithm)
    detail = ", ".join(f"{a}: {clean[a]['nrmse']:.4f} -> {v:.4f}" for a, v in vals.items())
    record(3, ok, f"NRMSE noiseless -> noisy {detail}")


@pytest.fixture(scope="module")
def nm_sweep():
    cfg = cli.build_config("nm-sweep", {
        "pairs": "200", "n": "6", "seed": "404", "n_m_values": "1e6,1e8,1e10",
        "model": "linear,quadratic,exponential,richardson",
    })
    t0 = time.perf_counter()
    res = cli.run_nm_sweep(cfg, 1).summary["nrmse"]
    table = {(r["algorithm"], r["model"], r["n_m"]): r["nrmse"] for r in res}
    return table, time.perf_counter() - t0


def test_criterion_4_zne_efficacy(record, nm_sweep):
    table, dt = nm_sweep
    parts, ok = [], dt < 7200
    for alg in ("swap", "h"):
        raw, mit = table[(alg, "unmitigated", 10**8)], table[(alg, "richardson", 10**8)]
        ok &= mit < 0.03 and raw / mit >= 5
        parts.append(f"{alg}: {raw:.4f} -> {mit:.4f} ({raw / mit:.1f}x)")
    record(4, ok, ", ".join(parts) + f", {dt:.0f}s")


def test_criterion_5_measurement_count(record, nm_sweep):
    table, _ = nm_sweep
    ok, parts = True, []
    for alg in ("swap", "h"):
        r6, r10 = table[(alg, "richardson", 10**6)], table[(alg, "richardson", 10**10)]
        ok &= r10 < r6
        spread = max(
            max(table[(alg, m, nm)] for nm in (10**6, 10**8, 10**10))
            - min(table[(alg, m, nm)] for nm in (10**6, 10**8, 10**10))
            for m in ("linear", "quadratic", "exponential")
        )
        ok &= spread < 0.02
        parts.append(f"{alg}: richardson {r6:.4f} -> {r10:.4f}, other models spread {100 * spread:.2f} pp")
    record(5, ok, "; ".join(parts))


def test_criterion_6_truss_study(record):
    seeds = (0, 1, 2)
    rms = {b: [] for b in ("classical", "mitigated", "unmitigated")}
    for s in seeds:
        summary = cli.run_truss(cli.build_config("truss", {"seed": str(s)}), 1).summary
        for b in rms:
            assert summary[b]["converged"], (s, b)
            rms[b].append(summary[b]["sigma_rms"])
    mean = {b: float(np.mean(v)) for b, v in rms.items()}
    ok = (mean["classical"] <= 0.02 and mean["mitigated"] <= 0.02
          and mean["mitigated"] < mean["unmitigated"] and 0.03 <= mean["unmitigated"] <= 0.08)
    detail = ", ".join(f"{b} {100 * v:.2f}%" for b, v in mean.items())
    record(6, ok, f"mean sigma_RMS over seeds {seeds}: {detail}")


def test_criterion_7_kdtree(record):
    ro = RambergOsgoodParams()
    db = generate_db(ro, -6, 6, 161, scaling=tangent_scaling(ro, 6))
    pts = db.scaled()
    tree = KdTree(pts)
    rng = np.random.default_rng(707)
    queries = rng.uniform(pts.min(0), pts.max(0), size=(1000, 2))
    same, calls = 0, []
    for q in queries:
        i, _, c = tree.nearest(q)
        same += i == brute_force_nearest(pts, q)[0]
        calls.append(c)
    mean_calls = float(np.mean(calls))
    record(7, same == 1000 and mean_calls < len(db) / 2,
           f"{same}/1000 match brute force, mean calls {mean_calls:.1f} of {len(db)}")


def test_criterion_8_normal_approximation(record):
    draws = 20000
    exact, normal = cli.sampling_draws(0.3, 10**5, draws, 808)
    ks = stats.ks_2samp(exact, normal).statistic
    crit = cli.ks_critical(draws, draws)
    timing = cli.sampling_timing(0.3, [10**4, 10**8, 10**12], draws, 808, repeats=7)
    normal_t = [v for k, v in timing.items() if k.startswith("normal:")]
    ratio = max(normal_t) / min(normal_t)
    record(8, ks < crit and ratio < 3.0,
           f"KS {ks:.4f} < {crit:.4f}, normal-mode time spread {ratio:.2f}x across n_m")


def test_criterion_9_simulator_soundness(record):
    rng = np.random.default_rng(909)
    noise = build_noise_model()
    # channel completeness for every noisy gate class
    comp = max(
        np.abs(sum(k.conj().T @ k for k in ch.operators) - np.eye(ch.operators[0].shape[0])).max()
        for entries in noise.classes.values() for ch, _ in entries
    )
    # density-matrix validity after every gate on real workload circuits
    for alg in qd.Algorithm:
        a, b = rng.normal(size=6), rng.normal(size=6)
        for i in (0, 2):
            run_circuit(qd.basis_circuit(alg, a, b), noise, folds=i, check=True)
    # decompose and fold preserve the unitary up to phase
    unit_err = 0.0
    for _ in range(5):
        a, b = rng.normal(size=4), rng.normal(size=4)
        c = qd.swap_test_circuit(a, b)
        u = c.unitary()
        for i in (0, 1, 2):
            w = fold(decompose(c), i).unitary()
            k = np.unravel_index(np.argmax(np.abs(u)), u.shape)
            unit_err = max(unit_err, np.abs(w - (w[k] / u[k]) * u).max())
    # identity-fold series under depolarizing noise
    q = 0.02
    series_err = 0.0
    for kind, p0 in (("i", 1.0), ("x", 0.0)):
        c = decompose(Circuit(1).append(kind, [0]))
        p = zne.exact_series(c, 6, depolarizing_noise_model(q))
        series_err = max(series_err, np.abs(p - (0.5 + (1 - q) ** zne.fold_scales(6) * (p0 - 0.5))).max())
    ok = comp < 1e-10 and unit_err < 1e-10 and series_err < 1e-10
    record(9, ok, f"completeness {comp:.1e}, unitary {unit_err:.1e}, fold series {series_err:.1e}")


def test_criterion_10_circuit_shape(record):
    rng = np.random.default_rng(1010)
    expected = {("swap", 6): (6, 100), ("h", 6): (4, 70), ("h", 2): (2, 15)}
    ok, parts = True, []
    for (alg, D), (qubits, depth_ref) in expected.items():
        depths, nq = [], set()
        for _ in range(10):
            c = qd.basis_circuit(alg, rng.normal(size=D), rng.normal(size=D))
            nq.add(c.n_qubits)
            depths.append(c.depth())
        depth = float(np.mean(depths))
        ok &= nq == {qubits} and 0.5 * depth_ref <= depth <= 2 * depth_ref
        parts.append(f"{alg} D={D}: {sorted(nq)} qubits, depth {depth:.0f} (ref {depth_ref})")
    record(10, ok, "; ".join(parts))
