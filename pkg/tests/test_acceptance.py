"""Acceptance gate: each test checks one criterion at its pinned tolerance and budget."""

import os
import time

import numpy as np
import pytest

from prom import analysis, cli
from prom.checks import run_checks
from prom.tasks import LossConfig, TrainConfig, train_chain, train_point_cloud, train_rotation_recovery

SEEDS = (0, 1, 2)

pytestmark = pytest.mark.slow


def test_1_jacobian_oracle_suite(report):
    start = time.perf_counter()
    results = run_checks(n_samples=1000, seed=42)
    elapsed = time.perf_counter() - start
    ok = all(r.passed for r in results) and min(r.samples for r in results) >= 1000 and elapsed < 120
    detail = "; ".join(f"{r.name} {r.max_rel_error:.1e}<={r.tolerance:.0e}" for r in results)
    assert report(1, ok, f"{detail}; {elapsed:.1f}s"), detail


def test_2_lambda_min_at_machine_precision(report):
    start = time.perf_counter()
    prom = analysis.eigen_verification("prom", 1000)
    gs = analysis.eigen_verification("gs", 1000)
    svd = analysis.eigen_verification("svd", 1000)
    elapsed = time.perf_counter() - start
    svd_ok = svd.lambda_min[~svd.flagged]
    frac_svd = float(np.mean(svd_ok < 1e-12))
    ok = (
        np.all(prom.lambda_min == 1.0)
        and gs.fraction_below(1e-12) >= 0.99
        and frac_svd >= 0.99
        and max(np.abs(gs.lambda_min).max(), np.abs(svd.lambda_min).max()) < 1e-6
        and elapsed < 60
    )
    detail = (f"prom all 1: {bool(np.all(prom.lambda_min == 1.0))}; gs <1e-12: {gs.fraction_below(1e-12):.3f}; "
              f"svd <1e-12: {frac_svd:.3f} (flagged {int(svd.flagged.sum())}); "
              f"max |lambda_min| {max(np.abs(gs.lambda_min).max(), np.abs(svd.lambda_min).max()):.1e}; {elapsed:.1f}s")
    assert report(2, ok, detail), detail


def test_3_gradient_scatter_phenomena(report):
    start = time.perf_counter()
    res = {m: analysis.gradient_scatter(m, 0.5, 10000, seed=42) for m in analysis.METHODS}
    sweep = {m: [analysis.gradient_scatter(m, s, 10000, seed=42).sign_disagreement for s in (0.1, 0.5, 1.0)]
             for m in ("gs", "svd")}
    elapsed = time.perf_counter() - start
    parts = {
        "prom collinear": res["prom"].collinearity_residual < 1e-10,
        "gs sign>=1%": res["gs"].sign_disagreement >= 0.01,
        "svd sign>=1%": res["svd"].sign_disagreement >= 0.01,
        "gs outlier>=10": res["gs"].outlier_ratio >= 10,
        "svd outlier>=10": res["svd"].outlier_ratio >= 10,
        "sign rate nondecreasing in sigma": all(np.all(np.diff(v) >= 0) for v in sweep.values()),
        "runtime<2min": elapsed < 120,
    }
    detail = (f"gs sign {res['gs'].sign_disagreement:.3f} outlier {res['gs'].outlier_ratio:.2f}; "
              f"svd sign {res['svd'].sign_disagreement:.3f} outlier {res['svd'].outlier_ratio:.2f}; "
              f"prom residual {res['prom'].collinearity_residual:.1e}; "
              f"sign vs sigma gs {np.round(sweep['gs'], 3).tolist()} svd {np.round(sweep['svd'], 3).tolist()}; "
              f"failed: {[k for k, v in parts.items() if not v] or 'none'}; {elapsed:.1f}s")
    assert report(3, all(parts.values()), detail), detail


def test_4_explosion_scaling(report):
    start = time.perf_counter()
    rows = analysis.explosion_probe(analysis.EXPLOSION_GAPS)
    elapsed = time.perf_counter() - start
    gaps, gs = analysis.probe_curve(rows, "gs")
    _, svd = analysis.probe_curve(rows, "svd")
    _, prom = analysis.probe_curve(rows, "prom")
    scaled = gs * gaps
    growth = svd[gaps == 1e-6][0] / svd[gaps == 1e-1][0]
    ok = scaled.max() / scaled.min() <= 10 and growth >= 1e4 and np.ptp(prom) == 0 and elapsed < 60
    detail = f"6D norm*gap in [{scaled.min():.3f}, {scaled.max():.3f}]; svd growth {growth:.2e}; prom {prom[0]}"
    assert report(4, ok, detail), detail


def test_5_representation_orderings(report):
    start = time.perf_counter()
    rot = {h: [train_rotation_recovery(h, TrainConfig(seed=s)).mean for s in SEEDS]
           for h in ("prom", "six_d", "quat", "euler")}
    pc = {h: [train_point_cloud(h, TrainConfig(seed=s)).mean for s in SEEDS] for h in ("prom", "six_d")}
    elapsed = time.perf_counter() - start
    chain_order = sum(rot["prom"][i] < rot["quat"][i] < rot["euler"][i] for i in range(len(SEEDS)))
    ok = (
        np.mean(rot["prom"]) < np.mean(rot["six_d"])
        and np.mean(pc["prom"]) < np.mean(pc["six_d"])
        and chain_order >= 2
        and elapsed < 900
    )
    fmt = lambda d: ", ".join(f"{k} {np.round(v, 3).tolist()}" for k, v in d.items())  # noqa: E731
    detail = f"rotation recovery deg: {fmt(rot)}; point cloud deg: {fmt(pc)}; prom<quat<euler in {chain_order}/3; {elapsed:.0f}s"
    assert report(5, ok, detail), detail


def test_6_orthogonalization_placement(report):
    start = time.perf_counter()
    variants = {"id-id": ("id", "id"), "gs-id": ("gs", "id"), "id-gs": ("id", "gs"), "gs-gs": ("gs", "gs")}
    mse = {k: [train_chain("prom", LossConfig(ortho_in_theta=t, ortho_in_downstream=y),
                           cfg=TrainConfig(seed=s)).extra["position_mse"] for s in SEEDS]
           for k, (t, y) in variants.items()}
    elapsed = time.perf_counter() - start
    mean = {k: float(np.mean(v)) for k, v in mse.items()}
    direction = sum(mse["gs-id"][i] < mse["id-gs"][i] for i in range(len(SEEDS)))
    parts = {
        "id-id <= gs-id": mean["id-id"] <= mean["gs-id"],
        "id-id < gs-gs": mean["id-id"] < mean["gs-gs"],
        "gs-id beats id-gs in >=2/3": direction >= 2,
        "runtime<10min": elapsed < 600,
    }
    detail = (", ".join(f"{k} {np.array(v).round(5).tolist()}" for k, v in mse.items())
              + f"; failed: {[k for k, v in parts.items() if not v] or 'none'}; {elapsed:.0f}s")
    assert report(6, all(parts.values()), detail), detail


def test_7_learning_rate_stability(report):
    start = time.perf_counter()
    rows = analysis.lr_sweep(analysis.METHODS, analysis.SWEEP_LRS, seed=42)
    elapsed = time.perf_counter() - start
    best = {m: analysis.max_stable_lr(rows, m) for m in analysis.METHODS}
    lr_key = {m: (best[m] if best[m] is not None else 0.0) for m in best}
    prom_err = {r["lr"]: r["final_error"] for r in rows if r["method"] == "prom"}
    improves = best["prom"] is not None and prom_err[best["prom"]] <= 1.2 * prom_err[min(prom_err)]
    ok = (
        len(rows) == 12
        and lr_key["prom"] >= lr_key["gs"]
        and lr_key["prom"] >= lr_key["svd"]
        and improves
        and elapsed < 600
    )
    ratio = lr_key["prom"] / max(lr_key["gs"], 1e-300)
    diverged = [(r["method"], r["lr"]) for r in rows if r["diverged_at"] != ""]
    detail = f"max stable lr {best}; prom/gs ratio {ratio:.1f}; diverged {diverged or 'none'}; {elapsed:.0f}s"
    assert report(7, ok, detail), detail


DETERMINISM_RUNS = [
    ["scatter", "--iters", "2000", "--sigma", "0.1,0.5", "--eigen-samples", "200"],
    ["eigen", "--samples", "300"],
    ["explode"],
    ["rot-recover", "--heads", "prom,six_d,euler", "--epochs", "1", "--eval-size", "200"],
    ["point-cloud", "--epochs", "1", "--eval-size", "200"],
    ["chain", "--ortho-theta", "gs", "--ortho-y", "svd", "--epochs", "1", "--eval-size", "200"],
    ["lr-sweep", "--lrs", "1e-4,8e-4", "--epochs", "1", "--steps-per-epoch", "30", "--eval-size", "100",
     "--threads", "3"],
    ["check", "--samples", "200"],
]


def test_8_determinism(tmp_path, report):
    mismatches = []
    n_files = 0
    for argv in DETERMINISM_RUNS:
        outs = [tmp_path / f"{argv[0]}_{i}" for i in (0, 1)]
        for out in outs:
            assert cli.main(argv + ["--out", str(out)]) == 0
        names = sorted(n for n in os.listdir(outs[0]) if n.endswith(".csv"))
        assert names == sorted(n for n in os.listdir(outs[1]) if n.endswith(".csv"))
        for name in names:
            n_files += 1
            if (outs[0] / name).read_bytes() != (outs[1] / name).read_bytes():
                mismatches.append(f"{argv[0]}/{name}")
    detail = f"{len(DETERMINISM_RUNS)} subcommands, {n_files} CSVs compared, mismatches: {mismatches or 'none'}"
    assert report(8, not mismatches, detail), detail
