"""Batch pipeline stages shared by the command line and the acceptance suite.

Every stage is a deterministic function of its on-disk inputs, the
:class:`RunConfig` and its seed.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import synth
from .errors import DegenerateLabels, IoFailure, MissingFile, OocyteError
from .evaluation import (
    ConfusionCounts,
    count_error_report,
    confusion_metrics,
    ks_statistic,
    localization_check,
    per_class_iou,
    roc_auc,
)
from .features import (
    ABLATION_SUBSETS,
    FeatureVector,
    extract_features,
    read_features_csv,
    to_arrays,
    write_features_csv,
)
from .imagery import (
    ManifestEntry,
    OocyteAnnotation,
    load_gray_image,
    load_label_mask,
    load_manifest,
    save_gray_image,
    save_label_mask,
    save_manifest,
    write_json,
    write_text,
)
from .morphology import Roi, extract_roi, localize, round_half_away
from .svm import (
    DEFAULT_C_GRID,
    DEFAULT_GAMMA_GRID,
    SMOClassifier,
    grid_search,
    load_model,
    loo_decision,
    loo_accuracy,
    save_model,
    stratified_split,
)

log = logging.getLogger(__name__)


class ConfigError(Exception):
    """Invalid configuration; a usage error rather than a data error."""


@dataclass
class RunConfig:
    seed: int = 0
    localization_min_area: int = 10_000
    polar_body_min_area: int = 500
    roi_size: int = 416
    localization_radius: float = 10.0
    C_grid: list[float] = field(default_factory=lambda: list(DEFAULT_C_GRID))
    gamma_grid: list[float] = field(default_factory=lambda: list(DEFAULT_GAMMA_GRID))
    folds: int = 5
    test_fraction: float = 0.2
    tol: float = 1e-3
    max_iter: int = 100_000
    C: float | None = None
    gamma: float | None = None
    n_oocytes: int = 120
    noise_sigma: float = 2.0
    expert_flip_rate: float = 0.0

    def __post_init__(self):
        for name in ("localization_min_area", "polar_body_min_area", "roi_size",
                     "localization_radius", "folds", "tol", "max_iter"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in [0, 1)")
        if self.n_oocytes < 0:
            raise ConfigError("n_oocytes must be non-negative")
        if not self.C_grid or not self.gamma_grid:
            raise ConfigError("grids must be non-empty")
        if any(v <= 0 for v in list(self.C_grid) + list(self.gamma_grid)):
            raise ConfigError("grid values must be positive")

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        raw = {}
        if path is not None:
            try:
                raw = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(raw, dict):
                raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def stage_seed(self, stage: str) -> int:
        return synth.derive_seed(self.seed, stage)


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create directory {path}: {exc}") from exc
    return path


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise MissingFile(str(path)) from exc
    except json.JSONDecodeError as exc:
        raise OocyteError(f"{path}: {exc}") from exc


# --- synth -----------------------------------------------------------------

def run_synth(cfg: RunConfig, out) -> list[ManifestEntry]:
    """Write a synthetic dataset of ``cfg.n_oocytes`` oocytes under ``out``."""
    out = ensure_dir(out)
    seed = cfg.stage_seed("synth")
    scenes = synth.dataset_scenes(cfg.n_oocytes, seed) if cfg.n_oocytes else []
    flip_rng = synth.make_rng(synth.derive_seed(seed, "expert"))
    entries = []
    for k, spec in enumerate(scenes):
        spec = dataclasses.replace(spec, noise_sigma=cfg.noise_sigma)
        image, mask, truth = synth.generate_scene(spec)
        scene_dir = ensure_dir(out / f"scene_{k:04d}")
        save_gray_image(image, scene_dir / "image.pgm")
        save_label_mask(mask, scene_dir / "mask.pgm")
        write_json({"width": spec.width, "height": spec.height, "seed": spec.seed,
                    "noise_sigma": spec.noise_sigma, "oocytes": truth}, scene_dir / "truth.json")
        oocytes = []
        for t in truth:
            expert = t["viable"] ^ bool(flip_rng.random() < cfg.expert_flip_rate)
            oocytes.append(OocyteAnnotation(round_half_away(t["cx"]), round_half_away(t["cy"]), expert))
        entries.append(ManifestEntry(scene_dir / "image.pgm", scene_dir / "mask.pgm", oocytes,
                                     sum(t["viable"] for t in truth)))
    save_manifest(entries, out / "manifest.json")
    log.info("wrote %d scenes to %s", len(entries), out)
    return entries


# --- localize ----------------------------------------------------------------

def run_localize(cfg: RunConfig, manifest, out) -> dict:
    """Detect oocytes in every mask, crop ROIs and compare with annotations."""
    out = ensure_dir(out)
    entries = load_manifest(manifest)
    rois, per_image = [], []
    for idx, entry in enumerate(entries):
        image = load_gray_image(entry.image)
        mask = load_label_mask(entry.mask)
        if image.shape != mask.shape:
            raise OocyteError(f"{entry.image} and {entry.mask} differ in size")
        comps = localize(mask, cfg.localization_min_area)
        centroids = [c.centroid for c in comps]
        gt = [(o.cx, o.cy) for o in entry.oocytes]
        check = localization_check(centroids, gt, cfg.localization_radius)
        match_of = {p: (g, d) for p, g, d in check.pairs}
        image_id = f"img{idx:04d}"
        for k, centroid in enumerate(centroids):
            roi_id = f"{image_id}_roi{k:02d}"
            roi = extract_roi(image, mask, centroid, cfg.roi_size, image_id, roi_id)
            roi_dir = ensure_dir(out / roi_id)
            save_gray_image(roi.image, roi_dir / "image.pgm")
            save_label_mask(roi.mask, roi_dir / "mask.pgm")
            g, d = match_of.get(k, (None, None))
            label = "unknown"
            if g is not None and d < cfg.localization_radius:
                label = "viable" if entry.oocytes[g].viable else "nonviable"
            rois.append({
                "id": roi_id, "image_index": idx,
                "source": Path(os.path.relpath(entry.image, Path(manifest).parent)).as_posix(),
                "centroid": list(centroid), "center": list(roi.center), "origin": list(roi.origin),
                "label": label, "gt_index": g,
            })
        per_image.append({"image_index": idx, "detected": len(centroids), "annotated": len(gt),
                          **check.to_dict()})
    annotated = [p for p in per_image if p["annotated"]]
    summary = {
        "images": len(per_image),
        "count_match_fraction": (sum(p["count_match"] for p in per_image) / len(per_image)
                                 if per_image else None),
        "within_radius_fraction": (
            sum(p["fraction_within"] * p["annotated"] for p in annotated)
            / sum(p["annotated"] for p in annotated) if annotated else None),
        "radius": cfg.localization_radius,
    }
    report = {"summary": summary, "images": per_image}
    write_json({"rois": rois}, out / "rois.json")
    write_json(report, out / "localization.json")
    log.info("localized %d ROIs in %d images", len(rois), len(entries))
    return {"rois": rois, "localization": report}


# --- extract -----------------------------------------------------------------

def run_extract(cfg: RunConfig, rois_index, out) -> list[FeatureVector]:
    """Feature CSV for every ROI; ROIs whose extraction fails are logged and skipped."""
    rois_index = Path(rois_index)
    index = read_json(rois_index)["rois"]
    vectors = []
    for rec in index:
        roi_dir = rois_index.parent / rec["id"]
        image = load_gray_image(roi_dir / "image.pgm")
        mask = load_label_mask(roi_dir / "mask.pgm")
        roi = Roi(image, mask, tuple(rec["center"]), tuple(rec["origin"]),
                  str(rec["image_index"]), rec["id"])
        try:
            vectors.append(extract_features(roi, rec.get("label", "unknown"), cfg.polar_body_min_area))
        except OocyteError as exc:
            log.warning("skipping ROI %s: %s: %s", rec["id"], type(exc).__name__, exc)
    write_features_csv(vectors, out)
    return vectors


# --- train / predict -----------------------------------------------------------

def run_train(cfg: RunConfig, features_csv, out) -> dict:
    """Stratified hold-out split, grid search on the training part, final fit."""
    out = ensure_dir(out)
    X, y, ids = to_arrays(read_features_csv(features_csv))
    if np.unique(y).size < 2:
        raise DegenerateLabels("training data holds a single class")
    if cfg.test_fraction > 0:
        train_idx, test_idx = stratified_split(y, cfg.test_fraction, cfg.stage_seed("split"))
    else:
        train_idx, test_idx = np.arange(y.size), np.array([], dtype=int)
    seed = cfg.stage_seed("train")
    report = grid_search(X[train_idx], y[train_idx], cfg.C_grid, cfg.gamma_grid, cfg.folds,
                         seed, cfg.tol, cfg.max_iter)
    model = SMOClassifier(C=report.C, gamma=report.gamma, tol=cfg.tol, max_iter=cfg.max_iter,
                          random_state=seed)
    model.fit(X[train_idx], y[train_idx])
    model.metadata_ = {"seed": cfg.seed, "folds": cfg.folds, "n_train": int(train_idx.size),
                       "mean_validation_accuracy": report.mean_accuracy}
    save_model(model, out / "model.json")
    write_json(report.to_dict(), out / "cv_report.json")
    split = {"train": [ids[i] for i in train_idx], "test": [ids[i] for i in test_idx]}
    write_json(split, out / "split.json")
    return {"model": model, "cv": report, "split": split}


def predictions_csv(rows) -> str:
    lines = ["oocyte_id,label,predicted,decision"]
    lines += [f"{r['oocyte_id']},{r['label']},{r['predicted']},{r['decision']!r}" for r in rows]
    return "\n".join(lines) + "\n"


def read_predictions(path) -> list[dict]:
    try:
        text = Path(path).read_text()
    except FileNotFoundError as exc:
        raise MissingFile(str(path)) from exc
    lines = text.splitlines()
    if not lines or lines[0] != "oocyte_id,label,predicted,decision":
        raise OocyteError(f"{path}: unexpected predictions header")
    rows = []
    for line in lines[1:]:
        if line:
            oid, label, pred, dec = line.split(",")
            rows.append({"oocyte_id": oid, "label": label, "predicted": pred, "decision": float(dec)})
    return rows


def run_predict(cfg: RunConfig, model_path, features_csv, out, loo: bool = False) -> list[dict]:
    """Label every oocyte with the model, or by leave-one-out with its hyperparameters."""
    model = load_model(model_path)
    vectors = read_features_csv(features_csv)
    X = np.array([v.values for v in vectors], dtype=float).reshape(len(vectors), -1)
    if loo:
        Xl, yl, ids = to_arrays(vectors)
        dec_by_id = dict(zip(ids, loo_decision(Xl, yl, model.C, model.gamma, tol=model.tol,
                                                max_iter=model.max_iter, seed=model.random_state)))
        known = set(ids)
        # unlabeled rows are scored by the full model
        rest = [i for i, v in enumerate(vectors) if v.oocyte_id not in known]
        if rest:
            for i, d in zip(rest, model.decision_function(X[rest])):
                dec_by_id[vectors[i].oocyte_id] = d
        dec = np.array([dec_by_id[v.oocyte_id] for v in vectors])
    else:
        dec = model.decision_function(X) if len(vectors) else np.empty(0)
    rows = [{"oocyte_id": v.oocyte_id, "label": v.label,
             "predicted": "viable" if d > 0 else "nonviable", "decision": float(d)}
            for v, d in zip(vectors, dec)]
    write_text(predictions_csv(rows), out)
    return rows


# --- evaluate ------------------------------------------------------------------

def run_evaluate(cfg: RunConfig, predictions, manifest, rois_index, out,
                 split=None, pred_manifest=None) -> dict:
    out = ensure_dir(out)
    rows = read_predictions(predictions)
    entries = load_manifest(manifest)
    test_ids = set(read_json(split)["test"]) if split else None

    scored = [r for r in rows if r["label"] != "unknown"
              and (test_ids is None or r["oocyte_id"] in test_ids)]
    y_true = np.array([1 if r["label"] == "viable" else -1 for r in scored])
    y_pred = np.array([1 if r["predicted"] == "viable" else -1 for r in scored])
    counts = ConfusionCounts.from_labels(y_true, y_pred, positive=1)
    classification = {"n": len(scored), "counts": dataclasses.asdict(counts),
                      "metrics": confusion_metrics(counts), "auc": None, "roc": None}
    if len(set(y_true.tolist())) == 2:
        curve = roc_auc([r["decision"] for r in scored], y_true, positive=1)
        classification["auc"] = curve.auc
        classification["roc"] = {"fpr": curve.fpr.tolist(), "tpr": curve.tpr.tolist()}
        write_text(curve.to_csv(), out / "roc.csv")

    loc_images = []
    for entry in entries:
        centroids = [c.centroid for c in localize(load_label_mask(entry.mask), cfg.localization_min_area)]
        check = localization_check(centroids, [(o.cx, o.cy) for o in entry.oocytes],
                                   cfg.localization_radius)
        loc_images.append({"detected": len(centroids), "annotated": len(entry.oocytes),
                           "count_match": check.count_match, "fraction_within": check.fraction_within})
    n_gt = sum(i["annotated"] for i in loc_images)
    localization = {
        "count_match_fraction": (sum(i["count_match"] for i in loc_images) / len(loc_images)
                                 if loc_images else None),
        "within_radius_fraction": (sum(i["fraction_within"] * i["annotated"] for i in loc_images) / n_gt
                                   if n_gt else None),
        "radius": cfg.localization_radius,
        "images": loc_images,
    }

    iou = None
    if pred_manifest is not None:
        pred_entries = load_manifest(pred_manifest)
        if len(pred_entries) != len(entries):
            raise OocyteError("prediction manifest and ground-truth manifest differ in length")
        iou = per_class_iou((load_label_mask(p.mask), load_label_mask(g.mask))
                            for p, g in zip(pred_entries, entries))

    counts_section = None
    index = read_json(rois_index)["rois"]
    image_of = {r["id"]: r["image_index"] for r in index}
    pred_by_image = {}
    for r in rows:
        if r["oocyte_id"] in image_of:
            k = image_of[r["oocyte_id"]]
            pred_by_image[k] = pred_by_image.get(k, 0) + (r["predicted"] == "viable")
    usable = [k for k, e in enumerate(entries) if e.true_viable_count is not None]
    if usable:
        truth = [entries[k].true_viable_count for k in usable]
        expert = count_error_report([sum(o.viable for o in entries[k].oocytes) for k in usable], truth,
                                    [len(entries[k].oocytes) for k in usable])
        method = count_error_report([pred_by_image.get(k, 0) for k in usable], truth,
                                    [len(entries[k].oocytes) for k in usable])
        counts_section = {"expert": expert.to_dict(), "classifier": method.to_dict(),
                          "ks_statistic": ks_statistic(expert.errors, method.errors)}

    report = {"classification": classification, "localization": localization,
              "iou": iou, "count_errors": counts_section}
    write_json(report, out / "report.json")
    return report


# --- ablate --------------------------------------------------------------------

def run_ablate(cfg: RunConfig, features_csv, out) -> dict:
    """Leave-one-out accuracy for each feature subset of the ablation table.

    Hyperparameters come from the config when both ``C`` and ``gamma`` are
    set; otherwise each subset gets its own stratified grid search, so that a
    point tuned for 24 features is not forced onto a single feature.
    """
    X, y, _ = to_arrays(read_features_csv(features_csv))
    seed = cfg.stage_seed("ablate")
    fixed = cfg.C is not None and cfg.gamma is not None
    rows = []
    for name, cols in ABLATION_SUBSETS.items():
        if fixed:
            C, gamma, cv_acc = cfg.C, cfg.gamma, None
        else:
            cv = grid_search(X[:, list(cols)], y, cfg.C_grid, cfg.gamma_grid, cfg.folds, seed,
                             cfg.tol, cfg.max_iter)
            C, gamma, cv_acc = cv.C, cv.gamma, cv.mean_accuracy
        acc = loo_accuracy(X, y, C, gamma, cols, tol=cfg.tol, max_iter=cfg.max_iter, seed=seed)
        rows.append({"subset": name, "n_features": len(cols), "C": C, "gamma": gamma,
                     "cv_accuracy": cv_acc, "accuracy": acc})
    result = {"hyperparams_from": "config" if fixed else "grid_search", "n_samples": int(y.size),
              "rows": rows}
    write_json(result, out)
    return result


def format_ablation(result: dict) -> str:
    lines = [f"{'features':<18}{'number':>8}{'C':>8}{'gamma':>8}{'accuracy':>10}"]
    for r in result["rows"]:
        lines.append(f"{r['subset']:<18}{r['n_features']:>8}{r['C']:>8g}{r['gamma']:>8g}{r['accuracy']:>10.3f}")
    return "\n".join(lines)
