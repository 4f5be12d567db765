"""Acceptance criteria, one test per criterion, each at its stated tolerance."""

import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from coughforest.audio import AudioClip
from coughforest.dataset import load_manifest, materialize, write_feature_csv
from coughforest.ensemble import rfecv
from coughforest.evaluation import ConfusionMatrix, metrics, select_threshold, stratified_kfold
from coughforest.features import BLOCK_SLICES, extract_feature_vector, frame_features, mel_scale
from coughforest.harness import PipelineOptions, StrategyConfig, run_strategy
from coughforest.neural_trees import ForestModel, forest_forward, leaf_routing, tree_forward
from coughforest.smote import smote_resample
from coughforest.tuning import SearchSpace, optimize, random_search

import oracles
from conftest import gaussian_matrix
from test_neural_trees import finite_difference_check, random_tree
from test_tuning import TWO_AXIS, branin_objective

SR = 22050


def test_01_feature_dimensionality(acceptance, rng):
    worst = 0.0
    ok = True
    for seconds in (0.05, 1.0, 3.0):
        clip = AudioClip(rng.uniform(-1, 1, int(seconds * SR)), SR)
        t0 = time.perf_counter()
        fv = extract_feature_vector(clip)
        worst = max(worst, time.perf_counter() - t0)
        widths = tuple(getattr(fv, name).size for name in BLOCK_SLICES)
        ok &= fv.fused.size == 193 and widths == (40, 12, 128, 7, 6)
    acceptance(1, ok and worst < 1.0, f"193 = (40, 12, 128, 7, 6); slowest clip {worst:.3f}s")


def test_02_mel_fixed_points(acceptance):
    m0, m1000 = mel_scale(0.0), mel_scale(1000.0)
    acceptance(2, m0 == 0.0 and abs(m1000 - 999.99) < 0.05,
               f"mel(0) = {m0}, mel(1000) = {m1000:.4f}")


def test_03_dsp_oracles(acceptance):
    rng = np.random.default_rng(33)
    t0 = time.perf_counter()
    worst = {"mfcc": 0.0, "contrast": 0.0, "chroma": 0.0}
    for _ in range(10):
        x = rng.uniform(-1, 1, SR)
        ff = frame_features(AudioClip(x, SR))
        power = oracles.dft_power_frames(x, 2048, 512)
        ref = {"mfcc": oracles.mfcc_frames(x),
               "contrast": oracles.contrast_frames(power, SR, 2048),
               "chroma": oracles.chroma_frames(power, SR, 2048)}
        for k in worst:
            worst[k] = max(worst[k], float(np.max(np.abs(ff[k] - ref[k]))))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-6 and elapsed < 30
    acceptance(3, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f}s")


def test_04_routing_normalization(acceptance):
    rng = np.random.default_rng(4)
    worst_mu = worst_out = 0.0
    for _ in range(100):
        tree = random_tree(rng, int(rng.integers(1, 9)), 5)
        x = rng.normal(scale=2, size=5)
        worst_mu = max(worst_mu, abs(leaf_routing(tree, x)[0].sum() - 1))
        worst_out = max(worst_out, abs(tree_forward(tree, x).sum() - 1))
    acceptance(4, worst_mu < 1e-9 and worst_out < 1e-9,
               f"max |sum mu - 1| = {worst_mu:.1e}, max |sum p - 1| = {worst_out:.1e}")


def test_05_forest_averaging(acceptance):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        trees = [random_tree(rng, int(rng.integers(1, 6)), 4, 0.75)
                 for _ in range(int(rng.integers(1, 8)))]
        X = rng.normal(size=(4, 4))
        want = np.mean([tree_forward(t, X) for t in trees], axis=0)
        worst = max(worst, float(np.max(np.abs(forest_forward(ForestModel(trees, 4), X) - want))))
    acceptance(5, worst < 1e-12, f"max deviation {worst:.1e}")


def test_06_gradients(acceptance):
    rng = np.random.default_rng(6)
    t0 = time.perf_counter()
    worst = 0.0
    for depth in (1, 2, 3, 4, 4):
        model = ForestModel([random_tree(rng, depth, 3, 1.0) for _ in range(2)], 3)
        X = rng.normal(size=(8, 3))
        worst = max(worst, finite_difference_check(model, X, rng.integers(0, 2, 8)))
    elapsed = time.perf_counter() - t0
    acceptance(6, worst < 1e-4 and elapsed < 60, f"worst relative error {worst:.1e}; {elapsed:.1f}s")


def test_07_smote(acceptance):
    ok = True
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n_pos = int(rng.integers(8, 30))
        X = rng.normal(size=(n_pos + 60, 5))
        y = np.r_[np.ones(n_pos, int), np.zeros(60, int)]
        res = smote_resample(X, y, k=5, seed=seed)
        ok &= bool(np.sum(res.labels == 1) == np.sum(res.labels == 0))
        ok &= bool(np.array_equal(res.rows[:len(y)], X))
        syn = res.synthetic_mask
        b, nb, lam = res.base_index[syn], res.neighbor_index[syn], res.lam[syn]
        ok &= bool(np.all((lam >= 0) & (lam <= 1)))
        pos_rows = np.flatnonzero(y == 1)
        d = np.linalg.norm(X[pos_rows][:, None] - X[pos_rows][None], axis=2)
        np.fill_diagonal(d, np.inf)
        knn = {int(pos_rows[i]): set(pos_rows[np.argsort(d[i], kind="stable")[:5]].tolist())
               for i in range(pos_rows.size)}
        ok &= all(int(n) in knn[int(bi)] for bi, n in zip(b, nb))
        expected = X[b] + lam[:, None] * (X[nb] - X[b])
        worst = max(worst, float(np.max(np.abs(res.rows[syn] - expected))))
    acceptance(7, ok and worst < 1e-9, f"balanced, originals kept; segment error {worst:.1e}, neighbours within k=5")


def test_08_threshold(acceptance):
    t = select_threshold([1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1])
    t_const = select_threshold([1, 0, 1, 0], [0.37] * 4)
    acceptance(8, t == 0.201 and t_const == 0.1, f"t = {t}, constant-J t = {t_const}")


def test_09_stratification(acceptance):
    y = np.r_[np.ones(185, int), np.zeros(1134, int)]
    ok = True
    for seed in range(50):
        for pos, neg in stratified_kfold(y, 10, seed).fold_counts(y):
            ok &= 18 <= pos <= 19 and 113 <= neg <= 114
    acceptance(9, ok, "185/1134 over 10 folds, 50 seeds: 18-19 pos, 113-114 neg")


def test_10_metric_arithmetic(acceptance):
    m = metrics(ConfusionMatrix(tp=48, fp=1, tn=72, fn=0))
    ok = (m.recall == 1.0 and abs(m.precision - 0.980) <= 0.001
          and abs(m.specificity - 0.986) <= 0.001 and abs(m.accuracy - 0.992) <= 0.001)
    acceptance(10, ok, f"recall {m.recall:.3f} precision {m.precision:.4f} "
                       f"specificity {m.specificity:.4f} accuracy {m.accuracy:.4f}")


@pytest.mark.slow
def test_11_rfecv_recovery(acceptance):
    t0 = time.perf_counter()
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        X = rng.normal(size=(500, 50))
        y = (X[:, :5].sum(axis=1) + rng.normal(size=500) > 0).astype(np.int64)
        sel = rfecv(X, y, folds=5, step=1, seed=seed, n_estimators=100)
        hits += len(set(sel.selected) & set(range(5))) >= 4
    elapsed = time.perf_counter() - t0
    acceptance(11, hits >= 18 and elapsed < 300, f"{hits}/20 seeds recover >= 4 of 5; {elapsed:.0f}s")


def test_12_bo_vs_random(acceptance):
    t0 = time.perf_counter()
    f = branin_objective(TWO_AXIS)
    best = max(f(TWO_AXIS.from_unit(np.array([a, b])))
               for a in np.linspace(0, 1, 46) for b in np.linspace(0, 1, 46))
    bo = [best - optimize(TWO_AXIS, f, 25, seed=s).best_score for s in range(20)]
    rs = [best - random_search(TWO_AXIS, f, 25, seed=s).best_score for s in range(20)]
    elapsed = time.perf_counter() - t0
    acceptance(12, np.median(bo) <= np.median(rs) and elapsed < 120,
               f"median regret BO {np.median(bo):.3f} vs random {np.median(rs):.3f}; {elapsed:.1f}s")


# reduced search budget so the full nested run stays within the time limit
E2E_OPTIONS = PipelineOptions(
    folds=10, bo_budget=6, bo_inner_folds=3, rfecv_folds=5, rfecv_step=10, rfecv_trees=50,
    search_space=SearchSpace(num_trees=(5, 20), depth=(3, 6), num_epochs=(5, 30)),
)


@pytest.mark.slow
def test_13_end_to_end(acceptance):
    fm = gaussian_matrix(400, 193, informative=10, shift=1.0, seed=13)
    t0 = time.perf_counter()
    report = run_strategy(fm, StrategyConfig.for_strategy(5, "dndf", seed=13), E2E_OPTIONS)
    elapsed = time.perf_counter() - t0
    auc = report.metrics["roc_auc"]
    acceptance(13, auc >= 0.95 and elapsed <= 300, f"pooled AUC {auc:.4f}; {elapsed:.0f}s")


def test_14_cli_reproducible(acceptance, tmp_path):
    features = tmp_path / "f.csv"
    write_feature_csv(gaussian_matrix(80, 193, shift=1.2, seed=14), features)
    texts = []
    for name in ("a.json", "b.json"):
        cmd = [sys.executable, "-m", "coughforest", "evaluate", "--features", str(features),
               "--strategy", "5", "--classifier", "dndf", "--folds", "3", "--seed", "21",
               "--report", str(tmp_path / name), "--bo-budget", "5", "--bo-inner-folds", "2",
               "--rfecv-step", "20", "--rfecv-trees", "10", "--max-trees", "6",
               "--max-depth", "4", "--max-epochs", "8"]
        subprocess.run(cmd, check=True, capture_output=True)
        d = json.loads((tmp_path / name).read_text())
        d.pop("timestamp")
        texts.append(json.dumps(d, sort_keys=True, indent=2))
    acceptance(14, texts[0] == texts[1], f"reports identical modulo timestamp ({len(texts[0])} bytes)")


def test_15_virufy_smoke(acceptance):
    path = os.environ.get("COUGHFOREST_VIRUFY_MANIFEST")
    if not path:
        acceptance.skip(15, "set COUGHFOREST_VIRUFY_MANIFEST to a Virufy manifest to run")
    fm = materialize(load_manifest(path), os.environ.get("COUGHFOREST_VIRUFY_CACHE"))
    report = run_strategy(fm, StrategyConfig.for_strategy(5, "dndf", seed=0))
    auc = report.metrics["roc_auc"]
    acceptance(15, auc >= 0.90, f"Virufy pooled AUC {auc:.4f} ({len(fm)} clips)")
