"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed live and repeated in the terminal
summary by conftest.py) and then asserts, so a red line and a failed test
always agree. The training-based checks take minutes; they are marked
``slow`` but are part of the default run.
"""

import itertools
import json
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from hiernas import cli
from hiernas.clustering import cluster, correlation_pipeline, reference_groups, reference_matrix, select_representatives
from hiernas.confusion import NetConfig, gradient_confusion, match_depth, profile, report_from_normalized
from hiernas.data import synth_texture, texture_splits
from hiernas.genotype import Genotype
from hiernas.operators import OperatorKind as K, space
from hiernas.search import derive_genotype
from hiernas.supernet import SingleEdgeNet
from hiernas.training import TrainConfig, evaluate, fit

from gradcheck import CASES, TOL, run_cases
from searchutil import brute_force, make_result, random_table

RESULTS = []


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    assert ok, line


def test_1_gradient_correctness():
    t0 = time.perf_counter()
    worst = {name: run_cases(name, 50) for name in CASES}
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if v > TOL}
    top = max(worst, key=worst.get)
    record(1, not bad and elapsed < 120,
           f"{len(CASES)} ops x 50 cases, worst rel err {worst[top]:.2e} ({top}), {elapsed:.1f}s"
           + (f"; over tolerance: {bad}" if bad else ""))


def test_2_clustering_fixtures():
    t0 = time.perf_counter()
    mismatches = []
    for sid in ("S1", "S2", "S3", "S4", "S5"):
        sp = space(sid)
        got = select_representatives(cluster(reference_matrix(sid), 0.2, sp), sp)
        want = reference_groups(sid)
        as_map = lambda a: {frozenset(g): r for g, r in zip(a.groups, a.representatives)}
        if as_map(got) != as_map(want):
            mismatches.append(sid)
    elapsed = time.perf_counter() - t0
    record(2, not mismatches and elapsed < 1.0,
           f"groups and key operators for S1-S5 in {elapsed * 1e3:.0f} ms" + (f"; mismatched: {mismatches}" if mismatches else ""))


@pytest.mark.slow
def test_3_live_correlation_ordering():
    # default seed and capture edge; the conv-pair margin is small and varies across seeds
    t0 = time.perf_counter()
    train = synth_texture(2048, 16, noise=1.0, seed=0)
    cfg = TrainConfig(epochs=5, eta=0.1, batch_size=8, seed=0)
    corr = correlation_pipeline(space("S1"), train, cfg, n_cells=3, channels=8, n_capture=512)
    elapsed = time.perf_counter() - t0
    s3s5, s3m3 = corr[K.SepConv3, K.SepConv5], corr[K.SepConv3, K.MaxPool3]
    m3a3, m3d3 = corr[K.MaxPool3, K.AvgPool3], corr[K.MaxPool3, K.DilConv3]
    record(3, s3s5 > s3m3 and m3a3 > m3d3 and elapsed < 900,
           f"r(Sep3,Sep5)={s3s5:.3f} vs r(Sep3,Max3)={s3m3:.3f}; r(Max3,Avg3)={m3a3:.3f} vs r(Max3,Dil3)={m3d3:.3f}; {elapsed:.0f}s")


def test_4_confusion_oracle():
    rng = np.random.default_rng(0)
    exact = True
    for m in range(2, 9):
        for _ in range(25):
            grads = list(rng.standard_normal((m, int(rng.integers(1, 20)))))
            ref = max(-float(np.dot(a, b)) for a, b in itertools.permutations(grads, 2))
            exact &= np.isclose(gradient_confusion(grads), ref, rtol=1e-12, atol=1e-12)
    worst_scale = 0.0
    for c in (1e-3, 0.5, 3.0, 1e3):
        grads = list(rng.standard_normal((6, 10)))
        base = gradient_confusion(grads)
        worst_scale = max(worst_scale, abs(gradient_confusion([c * g for g in grads]) - c * c * base) / abs(c * c * base))
    record(4, bool(exact) and worst_scale <= 1e-6,
           f"brute-force match for m=2..8: {bool(exact)}; worst c^2 scaling error {worst_scale:.1e}")


@pytest.mark.slow
def test_5_confusion_trend():
    t0 = time.perf_counter()
    data = synth_texture(768, 16, noise=1.0, seed=0)

    def run(kind, depth, seeds):
        return [profile(NetConfig(kind, depth, 8), data, train_epochs=2, n_iters=10, m=8, batch_size=16, seed=s).normalized
                for s in seeds]

    by_depth = {d: run("toy", d, range(10)) for d in (4, 8, 12)}
    means = [float(np.mean(by_depth[d])) for d in (4, 8, 12)]
    skip = float(np.mean(run("toy-skip", 12, range(5))))
    plain = float(np.mean(by_depth[12][:5]))
    elapsed = time.perf_counter() - t0
    increasing = means[0] < means[1] < means[2]
    record(5, increasing and skip < plain and elapsed < 1800,
           f"depth 4/8/12: {means[0]:.3g} / {means[1]:.3g} / {means[2]:.3g}; depth 12 skip {skip:.3g} vs plain {plain:.3g}; {elapsed:.0f}s")


def test_6_depth_matching():
    table = {5: 0.36, 14: 0.56, 17: 0.87, 20: 1.02}
    got = match_depth([report_from_normalized(d, v) for d, v in table.items()], report_from_normalized(20, 0.57, "target"))
    record(6, got == 14, f"matched depth {got} for target 0.57")


def _test_acc(run_dir):
    for line in (run_dir / "metrics.csv").read_text().splitlines():
        if line.startswith("test_acc,"):
            return float(line.split(",")[1])
    raise AssertionError(f"no test_acc in {run_dir}")


@pytest.mark.slow
def test_7_end_to_end_search(tmp_path):
    t0 = time.perf_counter()
    blobs = []
    for name in ("a", "b"):
        assert cli.main(["search", "--space", "S5", "--preset", "desk", "--run-dir", str(tmp_path / name)]) == 0
        blobs.append((tmp_path / name / "genotype.json").read_bytes())
    found = Genotype.load(tmp_path / "a" / "genotype.json")
    n_sep = sum(op is K.SepConv3 for node in found.normal for _, op in node)
    skip_cell = [[{"from": 0, "op": "SkipConnect"}, {"from": 1, "op": "SkipConnect"}]] * len(found.normal)
    (tmp_path / "skip.json").write_text(json.dumps({"normal": skip_cell, "reduce": skip_cell}))
    acc = {}
    for name, path in (("searched", tmp_path / "a" / "genotype.json"), ("skip", tmp_path / "skip.json")):
        assert cli.main(["train", "--preset", "desk", "--genotype", str(path), "--run-dir", str(tmp_path / f"train-{name}")]) == 0
        acc[name] = _test_acc(tmp_path / f"train-{name}")
    elapsed = time.perf_counter() - t0
    ok = (blobs[0] == blobs[1] and n_sep >= 1 and acc["searched"] >= 0.9 and acc["skip"] <= 0.6
          and acc["searched"] - acc["skip"] >= 0.25 and elapsed < 900)
    record(7, ok, f"repeatable={blobs[0] == blobs[1]}, SepConv3 edges in normal cell={n_sep}, "
                  f"searched acc {acc['searched']:.3f} vs all-skip {acc['skip']:.3f}; {elapsed:.0f}s")


@pytest.mark.slow
def test_8_alpha_tracks_standalone_accuracy():
    # the texture task plus a weaker colour cue: a conv reads the stripes (~100%),
    # a skip edge only sees the 75%-reliable cue, zero sees nothing (50%)
    kinds = [K.SepConv3, K.SkipConnect, K.Zero]
    rhos, detail = [], []
    for seed in range(5):
        train, test = texture_splits(512, 512, 16, noise=1.0, seed=seed, cue=0.5, cue_reliability=0.75)
        cfg = TrainConfig(epochs=15, batch_size=32, delta=0.5, seed=seed)
        accs = []
        for k in kinds:
            net = SingleEdgeNet([k], channels=8, rng=seed)
            fit(net, train, cfg)
            accs.append(evaluate(net, test))
        net = SingleEdgeNet(kinds, channels=8, rng=seed)
        fit(net, train, cfg, arch_params=net.arch_parameters())
        alpha = net.arch.alpha_numpy("normal")[0]
        rhos.append(float(spearmanr(alpha, accs).statistic))
        detail.append(f"seed {seed}: acc {np.round(accs, 3).tolist()} alpha {np.round(alpha, 3).tolist()}")
    print("\n".join(detail))
    record(8, all(r == 1.0 for r in rhos), f"Spearman per seed {rhos}")


def test_9_derivation_oracle():
    rng = np.random.default_rng(0)
    pool = [K.MaxPool3, K.SepConv3, K.SepConv5, K.DilConv3, K.SkipConnect]
    agree = clean = 0
    for _ in range(100):
        n_nodes = int(rng.integers(2, 5))
        rows, alphas = random_table(rng, n_nodes, pool)
        g = derive_genotype(make_result(rows, alphas, n_nodes))
        agree += g.normal == brute_force(rows, alphas, n_nodes)
        clean += all(len(node) == 2 and all(op is not K.Zero for _, op in node) for node in g.normal + g.reduce)
    record(9, agree == 100 and clean == 100, f"{agree}/100 match exhaustive enumeration, {clean}/100 well-formed")
