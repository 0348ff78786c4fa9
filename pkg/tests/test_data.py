import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kgboost.data import (
    FeatureQuantizer,
    RawDataset,
    SplitCandidate,
    bin_dataset,
    clip_targets,
    fit_quantizer,
    load_csv,
    quantize,
)
from kgboost.errors import EmptyDatasetError, ParseError, ShapeError


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadCsv:
    def test_basic(self, tmp_path):
        p = write(tmp_path, "a,b,y\n1,2,3\n4,5,6\n7,8,9\n")
        ds = load_csv(p, "y")
        assert ds.n_samples == 3 and ds.n_features == 2
        assert ds.feature_names == ("a", "b")
        np.testing.assert_array_equal(ds.targets, [3, 6, 9])

    def test_target_by_index(self, tmp_path):
        p = write(tmp_path, "y,a\n1,2\n3,4\n")
        ds = load_csv(p, 0)
        np.testing.assert_array_equal(ds.features[:, 0], [2, 4])

    def test_clip(self, tmp_path):
        p = write(tmp_path, "a,y\n0,10\n1,-10\n")
        ds = load_csv(p, "y", clip_R=1.0)
        assert (ds.targets**2).sum() / 4 <= 1.0 + 1e-12
        # whole-vector scaling keeps the ratio between targets
        assert ds.targets[0] == pytest.approx(-ds.targets[1])

    def test_non_numeric_cell_names_location(self, tmp_path):
        p = write(tmp_path, "a,b,y\n1,2,3\n4,abc,6\n")
        with pytest.raises(ParseError, match=r"row 3.*'b'.*abc"):
            load_csv(p, "y")

    def test_empty_file(self, tmp_path):
        with pytest.raises(EmptyDatasetError):
            load_csv(write(tmp_path, ""), "y")

    def test_header_only(self, tmp_path):
        with pytest.raises(EmptyDatasetError):
            load_csv(write(tmp_path, "a,y\n"), "y")

    def test_unknown_target(self, tmp_path):
        with pytest.raises(ParseError):
            load_csv(write(tmp_path, "a,y\n1,2\n"), "nope")


def test_clip_noop_when_within_bound():
    y = np.array([0.1, -0.2])
    np.testing.assert_array_equal(clip_targets(y, 1.0), y)


class TestQuantizer:
    def test_median_of_four(self):
        # nearest rank of p = 1/2 over 4 values is the 2nd smallest
        q = fit_quantizer(np.array([[1.0], [2.0], [3.0], [4.0]]), 1)
        np.testing.assert_array_equal(q.thresholds[0], [2.0])

    def test_constant_feature(self):
        q = fit_quantizer(np.array([[5.0], [5.0], [5.0]]), 3)
        assert len(q.thresholds[0]) == 0

    def test_duplicates_collapse(self):
        # ranks 1, 2, 3 of four -> values 1, 1, 2; the cut at the maximum is useless
        q = fit_quantizer(np.array([[1.0], [1.0], [2.0], [2.0]]), 3)
        np.testing.assert_array_equal(q.thresholds[0], [1.0])

    def test_equal_counts(self):
        x = np.arange(12, dtype=float)[:, None]
        ds = bin_dataset(RawDataset(x, np.zeros(12)), 2)
        np.testing.assert_array_equal(np.bincount(ds.bins[:, 0]), [4, 4, 4])

    def test_boundaries_and_ties(self):
        q = FeatureQuantizer((np.array([2.0, 5.0]),))
        np.testing.assert_array_equal(q.transform([[-100.0], [2.0], [2.0001], [5.0], [100.0]])[:, 0], [0, 0, 1, 1, 2])

    def test_single_threshold_tie_goes_left(self):
        q = FeatureQuantizer((np.array([2.0]),))
        assert q.transform([[2.0]])[0, 0] == 0

    def test_dimension_mismatch(self):
        q = FeatureQuantizer((np.array([1.0]), np.array([1.0])))
        with pytest.raises(ShapeError):
            q.transform(np.zeros((3, 3)))
        with pytest.raises(ShapeError):
            quantize(RawDataset(np.zeros((2, 1)), np.zeros(2)), q)

    def test_json_round_trip(self, tmp_path):
        ds = RawDataset(np.random.default_rng(0).random((30, 2)), np.zeros(30), ("u", "v"))
        q = fit_quantizer(ds, 5)
        q.save(tmp_path / "q.json")
        doc = json.loads((tmp_path / "q.json").read_text())
        assert list(doc["thresholds"]) == ["u", "v"]
        q2 = FeatureQuantizer.load(tmp_path / "q.json")
        np.testing.assert_array_equal(q.transform(ds.features), q2.transform(ds.features))


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 40), st.integers(1, 3)), elements=st.floats(-1e3, 1e3)),
    st.integers(1, 10),
)
def test_quantizer_properties(x, n):
    q = fit_quantizer(x, n)
    b = q.transform(x)
    for j, t in enumerate(q.thresholds):
        assert len(t) <= n
        assert np.all(np.diff(t) > 0)
        # monotone binning
        order = np.argsort(x[:, j], kind="stable")
        assert np.all(np.diff(b[order, j]) >= 0)
    # the threshold t_k is a representative of bin k; anything above the last is bin n_j
    for j, t in enumerate(q.thresholds):
        reps = np.zeros((len(t) + 1, len(q.thresholds)))
        reps[:, j] = np.append(t, t[-1] + 1.0 if len(t) else 0.0)
        np.testing.assert_array_equal(q.transform(reps)[:, j], np.arange(len(t) + 1))
    ds = quantize(RawDataset(x, np.zeros(len(x))), q)
    assert len(ds.candidates()) == int(ds.n_per_feature.sum()) <= n * x.shape[1]


def test_candidates_lexicographic(grid8):
    assert grid8.candidates() == [SplitCandidate(0, 0), SplitCandidate(0, 1), SplitCandidate(1, 0), SplitCandidate(1, 1)]
