import numpy as np
import pytest

from oocytekit import synth
from oocytekit.errors import DimensionMismatch, MissingZona, OocyteError, TooFewSamples
from oocytekit.features import (
    ABLATION_SUBSETS,
    FEATURE_NAMES,
    FeatureExtractor,
    FeatureVector,
    ZScoreScaler,
    apply_norm,
    extract_features,
    features_to_csv,
    fit_norm,
    read_features_csv,
    to_arrays,
    write_features_csv,
)
from oocytekit.morphology import Roi, extract_roi, localize


def synth_roi(seed=6, **kw):
    image, mask, truth = synth.generate_scene(synth.single_oocyte_scene(seed, **kw))
    (comp,) = localize(mask)
    return extract_roi(image, mask, comp.centroid, roi_id=f"roi{seed}"), truth[0]


def test_layout():
    assert len(FEATURE_NAMES) == 24
    assert FEATURE_NAMES[:8] == ("mu_c", "e_c", "gamma_c", "mu_z", "e_z", "gamma_z", "m", "r")
    assert {k: len(v) for k, v in ABLATION_SUBSETS.items()} == {
        "n_pb": 1, "n_pb + texture": 14, "n_pb + geometry": 11, "all": 24}
    npb = FEATURE_NAMES.index("n_pb")
    assert all(npb in cols for cols in ABLATION_SUBSETS.values())


def test_vector_matches_reference():
    roi, truth = synth_roi()
    v = extract_features(roi).values
    ref = truth["reference"]
    assert v[0] == pytest.approx(ref["mu_c"], rel=0.02)
    assert abs(v[1] - ref["e_c"]) < 0.05
    assert abs(v[2] - 1) < 0.05
    assert v[3] == pytest.approx(ref["mu_z"], rel=0.02)
    assert abs(v[4] - ref["e_z"]) < 0.05
    assert abs(v[5] - 1) < 0.05
    assert abs(v[6] - ref["m"]) < 2
    assert v[7] == pytest.approx(ref["r"], rel=0.05)


def test_identical_rois_identical_vectors():
    a, _ = synth_roi(8)
    b = Roi(a.image.copy(), a.mask.copy(), a.center, a.origin, roi_id=a.roi_id)
    np.testing.assert_array_equal(extract_features(a).values, extract_features(b).values)


def test_missing_zona():
    roi, _ = synth_roi()
    mask = roi.mask.copy()
    mask[mask == 2] = 0
    with pytest.raises(MissingZona):
        extract_features(Roi(roi.image, mask, roi.center, roi.origin))


def test_extractor_transformer():
    rois = [synth_roi(s)[0] for s in (1, 2)]
    X = FeatureExtractor().fit_transform(rois)
    assert X.shape == (2, 24)
    assert list(FeatureExtractor().get_feature_names_out()) == list(FEATURE_NAMES)


def test_vector_validation():
    with pytest.raises(DimensionMismatch):
        FeatureVector("x", np.zeros(3))
    with pytest.raises(ValueError):
        FeatureVector("x", np.full(24, np.nan))
    with pytest.raises(ValueError):
        FeatureVector("x", np.zeros(24), "maybe")


def test_norm_examples():
    v = np.arange(24.0)
    stats = fit_norm([v, -v])
    assert not stats.mean.any()
    assert not fit_norm([v, v]).std.any()
    assert not apply_norm(stats.mean, stats).any()
    with pytest.raises(TooFewSamples):
        fit_norm([v])


def test_norm_matches_two_pass_oracle():
    X = np.random.default_rng(0).normal(size=(10, 24)) * 50 + 3
    stats = fit_norm(X)
    for j in range(24):
        col = [float(x) for x in X[:, j]]
        mean = sum(col) / len(col)
        var = sum((x - mean) ** 2 for x in col) / len(col)
        assert abs(stats.mean[j] - mean) < 1e-12 * max(1, abs(mean))
        assert abs(stats.std[j] - var ** 0.5) < 1e-12 * max(1, var ** 0.5)


def test_self_normalised_columns():
    X = np.random.default_rng(1).normal(size=(30, 5))
    X[:, 2] = 7.0
    Z = ZScoreScaler().fit(X).transform(X)
    keep = [0, 1, 3, 4]
    np.testing.assert_allclose(Z[:, keep].mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(Z[:, keep].std(axis=0), 1, atol=1e-12)
    assert not Z[:, 2].any()


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    vecs = [FeatureVector(f"id{k}", rng.normal(size=24) * 10 ** k, lab)
            for k, lab in enumerate(["viable", "nonviable", "unknown"])]
    write_features_csv(vecs, tmp_path / "f.csv")
    back = read_features_csv(tmp_path / "f.csv")
    assert [(v.oocyte_id, v.label) for v in back] == [(v.oocyte_id, v.label) for v in vecs]
    for a, b in zip(vecs, back):
        np.testing.assert_array_equal(a.values, b.values)
    assert features_to_csv(back) == (tmp_path / "f.csv").read_text()
    X, y, ids = to_arrays(back)
    assert X.shape == (2, 24) and y.tolist() == [1, -1] and ids == ["id0", "id1"]


def test_csv_rejects_bad_header(tmp_path):
    (tmp_path / "f.csv").write_text("a,b\n1,2\n")
    with pytest.raises(OocyteError):
        read_features_csv(tmp_path / "f.csv")
