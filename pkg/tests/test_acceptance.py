"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import time

import numpy as np
import pytest

from oracles import brute_force_dual, direct_uwt, flood_fill_components, pair_count_auc

from oocytekit import synth
from oocytekit.evaluation import count_error_report, ks_statistic, localization_check, roc_auc
from oocytekit.features import extract_features, write_features_csv
from oocytekit.geometry import compute_geometry
from oocytekit.imagery import write_json
from oocytekit.morphology import Component, connected_components, extract_roi, localize, suppress_small
from oocytekit.pipeline import (
    RunConfig,
    run_ablate,
    run_evaluate,
    run_extract,
    run_localize,
    run_predict,
    run_synth,
    run_train,
)
from oocytekit.svm import SMOClassifier, rbf_gram, smo_solve
from oocytekit.texture import SUBBANDS, subband_energies, uwt_haar3

SEED = 20240611

# axes 80-160 px; thin enough zona that cytoplasm + zona + offset fits the ROI
GEOMETRY_SAMPLER = synth.OocyteSampler(major_range=(80.0, 160.0), thickness_range=(30.0, 32.0),
                                       max_offset=15.0)


def geometry_run(out):
    """Criterion 1 workload; writes the feature CSV and returns worst errors."""
    worst = dict.fromkeys(["mu", "e", "m", "gamma"], 0.0)
    vectors = []
    n_pb_ok = True
    for i in range(100):
        spec = synth.single_oocyte_scene(synth.derive_seed(SEED, "geometry", i), sampler=GEOMETRY_SAMPLER)
        image, mask, truth = synth.generate_scene(spec)
        (comp,) = localize(mask)
        roi = extract_roi(image, mask, comp.centroid, roi_id=f"oocyte{i:03d}")
        g = compute_geometry(roi)
        ref = truth[0]["reference"]
        worst["mu"] = max(worst["mu"], abs(g.mu_c - ref["mu_c"]) / ref["mu_c"],
                          abs(g.mu_z - ref["mu_z"]) / ref["mu_z"])
        worst["e"] = max(worst["e"], abs(g.e_c - ref["e_c"]), abs(g.e_z - ref["e_z"]))
        worst["m"] = max(worst["m"], abs(g.m - ref["m"]))
        worst["gamma"] = max(worst["gamma"], abs(g.gamma_c - 1), abs(g.gamma_z - 1))
        n_pb_ok &= g.n_pb == ref["n_pb"]
        vectors.append(extract_features(roi, "viable" if truth[0]["viable"] else "nonviable"))
    write_features_csv(vectors, out / "geometry_features.csv")
    return worst, n_pb_ok


def localization_run(out):
    """Criterion 6 workload; writes the localization report and returns it."""
    frames = []
    for i in range(30):
        spec = synth.frame_scene(synth.derive_seed(SEED, "frame", i))
        _, mask, truth = synth.generate_scene(spec)
        comps = localize(mask)
        check = localization_check([c.centroid for c in comps], [(t["cx"], t["cy"]) for t in truth])
        frames.append({"n_true": len(truth), "n_detected": len(comps), **check.to_dict()})
    write_json({"frames": frames}, out / "localization_report.json")
    return frames


def classification_run(out):
    """Criterion 7 workload through the pipeline stages; returns the ablation table."""
    cfg = RunConfig(seed=SEED, n_oocytes=120)
    run_synth(cfg, out / "data")
    run_localize(cfg, out / "data/manifest.json", out / "rois")
    run_extract(cfg, out / "rois/rois.json", out / "features.csv")
    run_train(cfg, out / "features.csv", out / "model")
    run_predict(cfg, out / "model/model.json", out / "features.csv", out / "loo_predictions.csv", loo=True)
    run_evaluate(cfg, out / "loo_predictions.csv", out / "data/manifest.json", out / "rois/rois.json",
                 out / "evaluation")
    return run_ablate(cfg, out / "features.csv", out / "ablation.json")


@pytest.fixture(scope="module")
def first_runs(tmp_path_factory):
    return {"out": tmp_path_factory.mktemp("acceptance_a")}


def test_criterion_1_geometry_oracle(first_runs, criterion):
    t0 = time.perf_counter()
    worst, n_pb_ok = geometry_run(first_runs["out"])
    elapsed = time.perf_counter() - t0
    ok = (worst["mu"] < 0.02 and worst["e"] < 0.05 and worst["m"] < 2 and worst["gamma"] < 0.05
          and n_pb_ok and elapsed < 60)
    assert criterion(1, ok, f"100 oocytes, worst mu {100 * worst['mu']:.2f}% e {worst['e']:.4f} "
                            f"m {worst['m']:.3f}px |gamma-1| {worst['gamma']:.4f}, n_pb exact={n_pb_ok}, "
                            f"{elapsed:.1f}s")


def test_criterion_2_wavelet_oracle(criterion):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(25):
        img = rng.uniform(0, 255, size=(32, 32))
        got, want = uwt_haar3(img), direct_uwt(img)
        worst = max(worst, max(float(np.max(np.abs(got[b] - want[b]))) for b in SUBBANDS))
    energies = subband_energies(uwt_haar3(np.full((32, 32), 123.0)), np.ones((32, 32), bool))
    zero_details = all(e == 0.0 for e in energies[1:])
    assert criterion(2, worst <= 1e-9 and zero_details,
                     f"25 images, max |diff| {worst:.2e}, constant-image detail energies exactly 0={zero_details}")


def test_criterion_3_smo_vs_qp(criterion):
    rng = np.random.default_rng(SEED)
    gamma = 0.5
    gx, gy = np.meshgrid(np.linspace(-2, 2, 5), np.linspace(-2, 2, 4))
    probe = np.column_stack([gx.ravel(), gy.ravel()])
    worst, mismatches, cases = 0.0, 0, 0
    for _ in range(10):
        while True:
            X = rng.normal(size=(6, 2))
            y = rng.choice([-1, 1], size=6)
            if 0 < np.sum(y > 0) < 6:
                break
        K = rbf_gram(X, X, gamma)
        for C in (0.5, 5.0):
            cases += 1
            ours = smo_solve(K, y, C)
            best, alpha, b = brute_force_dual(K, y, C)
            worst = max(worst, abs(ours.objective - best))
            model = SMOClassifier(C=C, gamma=gamma, normalize=False).fit(X, y)
            oracle_dec = rbf_gram(probe, X, gamma) @ (alpha * y) + b
            oracle_lab = np.where(oracle_dec > 0, 1, -1)
            mismatches += int(np.sum(model.predict(probe) != oracle_lab))
    assert criterion(3, worst <= 1e-6 and mismatches == 0,
                     f"{cases} problems, max objective gap {worst:.2e}, probe label mismatches {mismatches}")


def test_criterion_4_connected_components(criterion):
    rng = np.random.default_rng(SEED)
    identical = 0
    for _ in range(50):
        mask = rng.random((64, 64)) < rng.uniform(0.3, 0.7)
        got = [set(zip(c.rows.tolist(), c.cols.tolist())) for c in connected_components(mask)]
        identical += got == flood_fill_components(mask)
    frame = (200, 200)
    blobs = [Component(np.arange(n) // 200, np.arange(n) % 200, frame) for n in (9999, 10_000)]
    kept = [c.area for c in suppress_small(blobs, 10_000)]
    assert criterion(4, identical == 50 and kept == [10_000],
                     f"{identical}/50 partitions identical, areas kept at 1e4: {kept}")


def test_criterion_5_auc(criterion):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(20):
        scores = rng.integers(0, 15, size=100) / 2.0  # coarse values force ties
        labels = rng.permutation(np.r_[1, -1, rng.choice([-1, 1], size=98)])
        worst = max(worst, abs(roc_auc(scores, labels).auc - pair_count_auc(scores, labels)))
    labels = np.r_[np.ones(50), -np.ones(50)]
    ranked = np.arange(100, 0, -1.0)
    perfect = roc_auc(ranked, labels).auc
    inverted = roc_auc(-ranked, labels).auc
    assert criterion(5, worst <= 1e-12 and perfect == 1.0 and inverted == 0.0,
                     f"20 tied sets, max |AUC - pair count| {worst:.1e}, perfect {perfect}, inverted {inverted}")


def test_criterion_6_localization(first_runs, criterion):
    frames = localization_run(first_runs["out"])
    counts_ok = sum(f["n_true"] == f["n_detected"] for f in frames)
    worst = max(p["distance"] for f in frames for p in f["pairs"])
    sizes = sorted({f["n_true"] for f in frames})
    assert criterion(6, counts_ok == 30 and worst < 10,
                     f"30 frames (oocytes per frame {sizes}), count match {counts_ok}/30, "
                     f"worst centroid error {worst:.3f}px")


def test_criterion_7_end_to_end(first_runs, criterion):
    t0 = time.perf_counter()
    table = classification_run(first_runs["out"])
    elapsed = time.perf_counter() - t0
    acc = {r["subset"]: r["accuracy"] for r in table["rows"]}
    ok = (table["n_samples"] == 120 and len(acc) == 4 and acc["all"] >= 0.90
          and acc["all"] >= acc["n_pb"] and elapsed < 600)
    best = table["rows"][-1]
    rows = ", ".join(f"{k} {v:.3f}" for k, v in acc.items())
    assert criterion(7, ok, f"all-features grid point C={best['C']:g} gamma={best['gamma']:g}; "
                            f"LOO {rows}; {elapsed:.0f}s")


def test_criterion_8_count_errors(criterion):
    mae = count_error_report([3, 1, 1], [2, 3, 1]).mae
    same = ks_statistic([0, 1, 1, 2], [0, 1, 1, 2])
    disjoint = ks_statistic([-2, -1, -1], [0, 1, 3])
    assert criterion(8, mae == 1.0 and same == 0 and disjoint == 1,
                     f"MAE {mae}, KS identical {same}, KS disjoint {disjoint}")


def test_criterion_9_determinism(first_runs, tmp_path_factory, criterion):
    a = first_runs["out"]
    b = tmp_path_factory.mktemp("acceptance_b")
    geometry_run(b)
    localization_run(b)
    classification_run(b)
    artifacts = ["geometry_features.csv", "localization_report.json", "features.csv",
                 "model/model.json", "model/cv_report.json", "loo_predictions.csv",
                 "evaluation/report.json", "ablation.json"]
    missing = [p for p in artifacts if not (a / p).is_file()]
    differ = [p for p in artifacts if p not in missing and (a / p).read_bytes() != (b / p).read_bytes()]
    assert criterion(9, not missing and not differ,
                     f"{len(artifacts) - len(missing) - len(differ)}/{len(artifacts)} artifacts byte-identical"
                     + (f"; missing {missing}" if missing else "") + (f"; differ {differ}" if differ else ""))
