"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records a verdict line (printed in the terminal summary as
``CRITERION n: PASS|FAIL ...``) and then asserts it.
"""

import math
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from annlab import annihilator as ann
from annlab import bench, cli
from annlab.estimators import StandardNetRegressor
from annlab.net import NetworkParams, init_network
from annlab.poly import poly_eval
from annlab.variability import common_annihilator, companion_roots, inertia_signature

from conftest import record_criterion
from test_variability import oracle_signature


def verdict(n, ok, detail):
    record_criterion(n, ok, detail)
    assert ok, f"criterion {n}: {detail}"


def perturbed_net(widths, activation, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    net = init_network(widths, activation, seed)
    return net.with_vector(net.to_vector() + scale * rng.standard_normal(net.n_params))


# -- 1 -------------------------------------------------------------------------------

def test_criterion_1_gradient():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for i in range(20):
        depth = 1 + i % 3
        widths = [int(w) for w in rng.integers(1, 17, size=depth)]
        net = perturbed_net(widths, ("tanh", "sigmoid")[i % 2], 100 + i)
        x = rng.uniform(-2, 2, 16)
        y = rng.normal(size=16)
        _, g = net.loss_and_grad(x, y)
        theta, h = net.to_vector(), 1e-5
        fd = np.empty_like(theta)
        for k in range(theta.size):
            e = np.zeros_like(theta)
            e[k] = h
            fd[k] = (net.with_vector(theta + e).loss_and_grad(x, y)[0]
                     - net.with_vector(theta - e).loss_and_grad(x, y)[0]) / (2 * h)
        worst = max(worst, np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12))
    elapsed = time.perf_counter() - start
    verdict(1, worst < 1e-5 and elapsed < 10,
            f"max rel err {worst:.2e} (< 1e-5), runtime {elapsed:.1f} s (< 10 s)")


# -- 2 -------------------------------------------------------------------------------

def test_criterion_2_tanh_relation():
    start = time.perf_counter()
    worst_cos, worst_res = 1.0, 0.0
    for w in (1.0, 2.0, 0.5):
        net = NetworkParams([[[w]]], [[0.0]], [1.0], 0.0, "tanh")
        chain = ann.network_jets(net, 1)
        P = ann.find_relation(chain, order=1, degree=2)
        assert P is not None, f"no relation for w={w}"
        # f' - w + w f^2 = 0
        truth = {(0, 0): -w, (2, 0): w, (0, 1): 1.0}
        keys = sorted({m for m, _ in P.terms} | set(truth))
        a = np.array([P.coeff(k) for k in keys])
        b = np.array([truth.get(k, 0.0) for k in keys])
        worst_cos = min(worst_cos, abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b)))
        rep = ann.verify_annihilator(P, net, np.linspace(-2, 2, 201))
        worst_res = max(worst_res, rep.max_residual)
    elapsed = time.perf_counter() - start
    verdict(2, worst_cos > 1 - 1e-8 and worst_res < 1e-6 and elapsed < 5,
            f"min cosine 1-{1 - worst_cos:.1e} (> 1-1e-8), verification residual "
            f"{worst_res:.1e} (< 1e-6), runtime {elapsed:.2f} s (< 5 s)")


# -- 3 and 4 ---------------------------------------------------------------------------

ORDER_BOUND_ARCHS = [[2], [1, 1], [3], [2, 1], [1, 2], [1, 1, 1], [4], [2, 2], [3, 1], [1, 1, 2]]


@pytest.fixture(scope="module")
def order_bound_reports():
    reports = []
    for i, widths in enumerate(ORDER_BOUND_ARCHS):
        net = perturbed_net(widths, ("tanh", "sigmoid")[i % 2], 300 + i)
        reports.append((widths, net, ann.minimal_annihilator(net, degree_cap=4, seed=i)))
    return reports


def test_criterion_3_order_bound(order_bound_reports):
    lines, ok_count = [], 0
    for widths, net, rep in order_bound_reports:
        ok = rep.found and rep.order <= rep.M and rep.degree <= 4 and rep.residual_max < 1e-6
        ok_count += ok
        lines.append(f"{widths}:" + (f"k={rep.order},d={rep.degree}" if rep.found else "none"))
    verdict(3, ok_count == len(order_bound_reports),
            f"{ok_count}/{len(order_bound_reports)} nets with M in {{2,3,4}} related at order <= M, "
            f"degree <= 4, residual < 1e-6 ({' '.join(lines)})")


def test_criterion_4_constants(order_bound_reports):
    missing = [w for w, _, rep in order_bound_reports if not rep.found]
    worst = 0.0
    for _, net, rep in order_bound_reports:
        if rep.found:
            for c in ann.constant_solutions(net):
                worst = max(worst, abs(poly_eval(rep.P, [c] + [0.0] * (rep.P.n_vars - 1))))
    verdict(4, not missing and worst < 1e-6,
            f"max |P(c,0,..)| {worst:.1e} (< 1e-6) over nets with a relation; "
            f"{len(missing)} of {len(order_bound_reports)} nets have no relation to test")


# -- 5 -------------------------------------------------------------------------------

def test_criterion_5_saturation():
    task = bench.synthetic_task("sin")
    train = task.x <= task.border
    rows, ok = [], True
    for seed in (0, 1, 2):
        est = StandardNetRegressor(random_state=seed).fit(task.x[train], task.y[train])
        net = est.model_
        prof = ann.saturation_profile(net, (-1.0, 1.0))
        far = 1.0 + 10 * 2.0
        gap = abs(float(net.predict(np.array([far]))[0]) - net.saturation_limit(+1))
        ok &= prof.kappa_plus > 0 and prof.r2_plus > 0.95 and gap < 1e-6
        rows.append(f"seed{seed}: kappa+ {prof.kappa_plus:.3g} r2+ {prof.r2_plus:.4f} "
                    f"far gap {gap:.1e}")
    verdict(5, ok, "; ".join(rows) + " (need kappa+ > 0, r2 > 0.95, gap < 1e-6)")


# -- 6 -------------------------------------------------------------------------------

def test_criterion_6_classifiers():
    rng = np.random.default_rng(6)
    mismatches = 0
    for trial in range(100):
        n = int(rng.integers(2, 6))
        if trial % 2:
            A = rng.integers(-5, 6, size=(n, n))
            A = A + A.T
        else:
            L = np.tril(rng.integers(-2, 3, size=(n, n)), -1) + np.eye(n, dtype=int)
            A = L @ np.diag(rng.integers(-3, 4, size=n)) @ L.T
        mismatches += tuple(inertia_signature(A.astype(float))) != oracle_signature(A.tolist())
    worst_rec = 0.0
    for deg in range(1, 9):
        spec = companion_roots(rng.normal(size=deg))
        worst_rec = max(worst_rec, np.max(np.abs(np.real(np.poly(spec.roots)) - spec.numpy_coeffs)))
    x = np.linspace(0, 2 * np.pi, 401)
    rep = common_annihilator([np.sin(x), np.cos(x)], x, 4)
    d2p1 = rep.order == 2 and np.allclose(rep.operator, [1.0, 0.0], atol=1e-5)
    res = max(rep.per_block_residuals) if rep.per_block_residuals else math.inf
    verdict(6, mismatches == 0 and worst_rec < 1e-8 and d2p1 and res < 1e-5,
            f"inertia mismatches {mismatches}/100, companion reconstruction {worst_rec:.1e} "
            f"(< 1e-8), sin/cos operator {None if rep.operator is None else rep.operator.round(8).tolist()} "
            f"residual {res:.1e} (< 1e-5)")


# -- 7 -------------------------------------------------------------------------------

def test_criterion_7_table1(tmp_path):
    tasks = [bench.synthetic_task(name) for name in bench.SYNTHETIC_FUNCTIONS]
    start = time.perf_counter()
    records = bench.run_sweep(tasks, seeds=range(5), store=bench.BenchStore(tmp_path))
    elapsed = time.perf_counter() - start
    table = {row["task"]: row for row in bench.table1(records)}
    checks, parts = [], []
    for task, row in table.items():
        s, p = row["standard_mse"], row["proposed_mse"]
        seeds_ok = row["standard_seeds"] >= 5 and row["proposed_seeds"] >= 5
        won = s is not None and p is not None and (p <= 2 * s if task == "tanh" else p < s)
        checks.append(won and seeds_ok)
        rule = "p <= 2s" if task == "tanh" else "p < s"
        parts.append(f"{task} s={s:.3g} p={p:.3g} [{rule}: {'ok' if won else 'no'}]")
    verdict(7, all(checks) and elapsed < 1800,
            "; ".join(parts) + f"; 5 seeds; sweep {elapsed / 60:.1f} min (< 30)")


# -- 8 and 9 ---------------------------------------------------------------------------

def snapshot(directory: Path) -> dict:
    return {str(p.relative_to(directory)): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file()}


def rerun_identical(argv, out: Path) -> tuple[bool, dict]:
    assert cli.main([*argv, "--out", str(out)]) == 0
    first = snapshot(out)
    shutil.rmtree(out)
    assert cli.main([*argv, "--out", str(out)]) == 0
    return snapshot(out) == first, first


def test_criterion_8_fixture_pipeline(tmp_path):
    same, files = rerun_identical(["bench", "--fixture", "--seeds", "0,1"], tmp_path / "fx")
    rows = bench.read_csv_rows(tmp_path / "fx" / "summary.csv")
    header = [l for l in files["summary.csv"].decode().splitlines() if not l.startswith("#")][0]
    layout = sorted((r["model"], float(r["window"])) for r in rows) == sorted(
        (m, w) for m in bench.MODEL_TAGS for w in bench.DEFAULT_WINDOWS)
    task = bench.series_task(bench.fixture_spec())
    _, evals = bench.split_extrapolation(task.x, task.y, task.border, bench.DEFAULT_WINDOWS)
    sizes = [xe.size for xe, _ in evals]
    nested = all(set(a[0]) < set(b[0]) for a, b in zip(evals, evals[1:]))
    verdict(8, same and layout and nested and
            header == "task,model,window,mean_mse,std_mse,n_seeds",
            f"4 windows x 2 models layout {'ok' if layout else 'wrong'}, nested windows "
            f"{sizes} {'ok' if nested else 'not nested'}, rerun byte-identical {same}")


def test_criterion_9_determinism(tmp_path):
    fast = ["--max-epochs", "200", "--patience", "50", "--n-train", "200"]
    results = {}
    same, _ = rerun_identical(["train", "--task", "sin", "--hidden", "2", "--activation", "tanh",
                               *fast], tmp_path / "train")
    results["train"] = same
    ck = tmp_path / "ck.json"
    shutil.copy(tmp_path / "train" / "checkpoint.json", ck)
    results["annihilate"] = rerun_identical(["annihilate", str(ck), "--degree", "6"],
                                            tmp_path / "ann")[0]
    results["saturate"] = rerun_identical(["saturate", str(ck)], tmp_path / "sat")[0]
    results["classify"] = rerun_identical(
        ["classify", "--companion", "1,0,2", "--inertia", "1,2;2,1", "--quadratic",
         "1 + 1 * x0^1 x1^1", "--trajectories", "--t-end", "2"], tmp_path / "cls")[0]
    results["bench"] = rerun_identical(
        ["bench", "--tasks", "sin,tanh", "--seeds", "0,1", "--hidden", "3", "--depths", "1,2",
         "--width", "3", *fast], tmp_path / "bench")[0]
    src = tmp_path / "src"
    shutil.copytree(tmp_path / "bench", src)
    results["report"] = rerun_identical(["report", str(src / "records.jsonl")],
                                        tmp_path / "rep")[0]
    verdict(9, all(results.values()),
            "byte-identical reruns: " + ", ".join(f"{k} {v}" for k, v in results.items()))
