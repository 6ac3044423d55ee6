"""The 24-feature oocyte descriptor, its CSV form and z-score normalisation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DimensionMismatch, MissingFile, OocyteError, TooFewSamples
from .geometry import GEOMETRY_NAMES, compute_geometry
from .imagery import write_text
from .morphology import POLAR_BODY_MIN_AREA, Roi
from .texture import TEXTURE_NAMES, compute_texture

FEATURE_NAMES: tuple[str, ...] = GEOMETRY_NAMES + TEXTURE_NAMES
N_FEATURES = len(FEATURE_NAMES)

LABELS = ("nonviable", "viable", "unknown")

# column groups used by the feature-subset ablation
NPB = (FEATURE_NAMES.index("n_pb"),)
TEXTURE_COLUMNS = tuple(FEATURE_NAMES.index(n) for n in TEXTURE_NAMES)
GEOMETRY_COLUMNS = tuple(FEATURE_NAMES.index(n) for n in GEOMETRY_NAMES if n != "n_pb")
ABLATION_SUBSETS = {
    "n_pb": NPB,
    "n_pb + texture": tuple(sorted(NPB + TEXTURE_COLUMNS)),
    "n_pb + geometry": tuple(sorted(NPB + GEOMETRY_COLUMNS)),
    "all": tuple(range(N_FEATURES)),
}


@dataclass
class FeatureVector:
    oocyte_id: str
    values: np.ndarray
    label: str = "unknown"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (N_FEATURES,):
            raise DimensionMismatch(f"expected {N_FEATURES} values, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.oocyte_id}: non-finite feature value")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")


def extract_features(roi: Roi, label: str = "unknown",
                     min_polar_body_area: int = POLAR_BODY_MIN_AREA) -> FeatureVector:
    geom = compute_geometry(roi, min_polar_body_area)
    tex = compute_texture(roi)
    return FeatureVector(roi.roi_id, np.array(geom.as_tuple() + tex.as_tuple(), dtype=float), label)


class FeatureExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping a sequence of :class:`Roi` to an (n, 24) array."""

    def __init__(self, min_polar_body_area: int = POLAR_BODY_MIN_AREA):
        self.min_polar_body_area = min_polar_body_area

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        rows = [extract_features(roi, min_polar_body_area=self.min_polar_body_area).values for roi in X]
        return np.array(rows, dtype=float).reshape(len(rows), N_FEATURES)

    def get_feature_names_out(self, input_features=None):
        return np.array(FEATURE_NAMES, dtype=object)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def fit_norm(X) -> NormStats:
    """Per-column mean and population standard deviation."""
    X = np.asarray([v.values if isinstance(v, FeatureVector) else v for v in X], dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise TooFewSamples("normalisation needs at least two samples")
    return NormStats(X.mean(axis=0), X.std(axis=0))


def apply_norm(X, stats: NormStats) -> np.ndarray:
    """z-score ``X``; columns with zero spread map to 0."""
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != stats.mean.shape[0]:
        raise DimensionMismatch(f"expected {stats.mean.shape[0]} columns, got {X.shape[-1]}")
    safe = np.where(stats.std > 0, stats.std, 1.0)
    return np.where(stats.std > 0, (X - stats.mean) / safe, 0.0)


class ZScoreScaler(TransformerMixin, BaseEstimator):
    def fit(self, X, y=None):
        X = check_array(X)
        self.stats_ = fit_norm(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        return apply_norm(check_array(X), self.stats_)


# --- CSV ------------------------------------------------------------------

CSV_HEADER = list(FEATURE_NAMES) + ["oocyte_id", "label"]


def features_to_csv(vectors: list[FeatureVector]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for v in vectors:
        writer.writerow([repr(float(x)) for x in v.values] + [v.oocyte_id, v.label])
    return buf.getvalue()


def write_features_csv(vectors: list[FeatureVector], path) -> None:
    write_text(features_to_csv(vectors), path)


def read_features_csv(path) -> list[FeatureVector]:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise MissingFile(str(path)) from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != CSV_HEADER:
        raise OocyteError(f"{path}: unexpected feature CSV header")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise DimensionMismatch(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields")
        try:
            out.append(FeatureVector(row[N_FEATURES], [float(x) for x in row[:N_FEATURES]],
                                     row[N_FEATURES + 1]))
        except ValueError as exc:
            raise OocyteError(f"{path}:{lineno}: {exc}") from exc
    return out


def to_arrays(vectors: list[FeatureVector], labeled_only: bool = True):
    """``(X, y, ids)`` with ``y`` in {-1, +1} (viable = +1)."""
    if labeled_only:
        vectors = [v for v in vectors if v.label != "unknown"]
    X = np.array([v.values for v in vectors], dtype=float).reshape(len(vectors), N_FEATURES)
    y = np.array([1 if v.label == "viable" else -1 for v in vectors], dtype=int)
    return X, y, [v.oocyte_id for v in vectors]
