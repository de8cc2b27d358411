"""Aggregation and the .h2rf interchange format."""

import numpy as np
import pytest

from histexpr import features as F
from histexpr.errors import (
    BadMagic,
    DuplicatePatient,
    EmptyIntersection,
    NonFiniteValue,
    ShapeMismatch,
    UnsupportedVersion,
)
from histexpr.expression import ExpressionMatrix


def pairwise_sum(rows):
    """Independent summation oracle: recursive pairwise order."""
    rows = list(rows)
    if len(rows) == 1:
        return rows[0].astype(np.float64)
    mid = len(rows) // 2
    return pairwise_sum(rows[:mid]) + pairwise_sum(rows[mid:])


class TestAggregate:
    def test_single_patch_is_identity(self):
        values = np.array([[1.5, -2.25, 3.0]], dtype=np.float32)
        z = F.aggregate(F.PatchFeatureSet("a", values)).z
        np.testing.assert_array_equal(z, values[0].astype(np.float64))

    def test_two_rows_mean(self):
        p = F.PatchFeatureSet("a", np.array([[1, 2], [3, 4]], dtype=np.float32))
        np.testing.assert_array_equal(F.aggregate(p).z, [2.0, 3.0])

    def test_matches_pairwise_summation_oracle(self):
        rng = np.random.default_rng(7)
        values = rng.normal(size=(1000, 1280)).astype(np.float32)
        z = F.aggregate(F.PatchFeatureSet("a", values)).z
        oracle = pairwise_sum([r.astype(np.float64) for r in values]) / 1000
        err = np.max(np.abs(z - oracle) / np.maximum(np.abs(oracle), 1e-30))
        assert err < 1e-10

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        values = rng.normal(size=(257, 33)).astype(np.float32)
        z1 = F.aggregate(F.PatchFeatureSet("a", values)).z
        z2 = F.aggregate(F.PatchFeatureSet("a", values[rng.permutation(257)])).z
        np.testing.assert_allclose(z1, z2, rtol=1e-12, atol=1e-12)

    def test_homogeneity(self):
        rng = np.random.default_rng(4)
        values = rng.normal(size=(64, 10)).astype(np.float32)
        z1 = F.aggregate(F.PatchFeatureSet("a", 4.0 * values)).z
        z2 = 4.0 * F.aggregate(F.PatchFeatureSet("a", values)).z
        np.testing.assert_allclose(z1, z2, rtol=1e-12)

    def test_duplication_invariance(self):
        rng = np.random.default_rng(5)
        values = rng.normal(size=(40, 12)).astype(np.float32)
        z1 = F.aggregate(F.PatchFeatureSet("a", values)).z
        z2 = F.aggregate(F.PatchFeatureSet("a", np.vstack([values, values]))).z
        np.testing.assert_allclose(z1, z2, rtol=1e-12, atol=1e-12)

    def test_empty_set_rejected(self):
        p = F.PatchFeatureSet("a", np.empty((0, 4), dtype=np.float32))
        with pytest.raises(F.EmptyFeatureSet):
            F.aggregate(p)


class TestH2rfFormat:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        original = F.PatchFeatureSet(
            "patient-000", rng.normal(size=(17, 9)).astype(np.float32),
            extractor_tag="unit-test",
        )
        path = tmp_path / "p.h2rf"
        F.write_features(original, path)
        loaded = F.read_features(path)
        assert loaded.patient_id == original.patient_id
        assert loaded.extractor_tag == original.extractor_tag
        np.testing.assert_array_equal(loaded.values, original.values)

    def test_round_trip_is_byte_stable(self, tmp_path):
        p = F.PatchFeatureSet("x", np.ones((2, 3), dtype=np.float32))
        F.write_features(p, tmp_path / "a.h2rf")
        F.write_features(F.read_features(tmp_path / "a.h2rf"), tmp_path / "b.h2rf")
        assert (tmp_path / "a.h2rf").read_bytes() == (tmp_path / "b.h2rf").read_bytes()

    def test_truncated_file(self, tmp_path):
        p = F.PatchFeatureSet("x", np.ones((4, 4), dtype=np.float32))
        path = tmp_path / "t.h2rf"
        F.write_features(p, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-7])
        with pytest.raises(ShapeMismatch):
            F.read_features(path)

    def test_trailing_garbage(self, tmp_path):
        p = F.PatchFeatureSet("x", np.ones((4, 4), dtype=np.float32))
        path = tmp_path / "t.h2rf"
        F.write_features(p, path)
        path.write_bytes(path.read_bytes() + b"\x00\x00")
        with pytest.raises(ShapeMismatch):
            F.read_features(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.h2rf"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(BadMagic):
            F.read_features(path)

    def test_unsupported_version(self, tmp_path):
        p = F.PatchFeatureSet("x", np.ones((1, 1), dtype=np.float32))
        path = tmp_path / "v.h2rf"
        F.write_features(p, path)
        blob = bytearray(path.read_bytes())
        blob[4] = 9
        path.write_bytes(bytes(blob))
        with pytest.raises(UnsupportedVersion):
            F.read_features(path)

    def test_nan_payload(self, tmp_path):
        p = F.PatchFeatureSet("x", np.ones((2, 2), dtype=np.float32))
        path = tmp_path / "nan.h2rf"
        F.write_features(p, path)
        blob = bytearray(path.read_bytes())
        blob[-4:] = np.array([np.nan], dtype="<f4").tobytes()
        path.write_bytes(bytes(blob))
        with pytest.raises(NonFiniteValue):
            F.read_features(path)

    def test_constructor_rejects_nan(self):
        values = np.ones((2, 2), dtype=np.float32)
        values[0, 0] = np.inf
        with pytest.raises(NonFiniteValue):
            F.PatchFeatureSet("x", values)


class TestCheckedInFixtures:
    """The pipeline runs from .h2rf bytes on disk; no extractor needed."""

    def test_fixture_files_parse_and_aggregate(self):
        from pathlib import Path
        fixture_dir = Path(__file__).parent / "fixtures"
        files = sorted(fixture_dir.glob("FIX*.h2rf"))
        assert len(files) == 3
        for path in files:
            parsed = F.read_features(path)
            assert parsed.patient_id == path.stem
            assert parsed.values.shape == (4, 16)
            assert len(F.aggregate(parsed).z) == 16


def _expr(ids, genes=2):
    values = np.arange(len(ids) * genes, dtype=np.float64).reshape(len(ids), genes)
    return ExpressionMatrix(list(ids), values, transformed=True)


class TestAssembleDataset:
    def test_inner_join_and_drop_report(self):
        feats = [F.SlideFeature(pid, np.array([float(i)]))
                 for i, pid in enumerate(["A", "B", "C"])]
        ds = F.assemble_dataset(feats, _expr(["B", "C", "D"]))
        assert ds.patient_ids == ["B", "C"]
        assert ds.dropped_features == ["A"]
        assert ds.dropped_expression == ["D"]

    def test_sorted_output(self):
        feats = [F.SlideFeature(pid, np.zeros(1)) for pid in ["z", "a", "m"]]
        ds = F.assemble_dataset(feats, _expr(["m", "z", "a"]))
        assert ds.patient_ids == ["a", "m", "z"]

    def test_disjoint_sets(self):
        feats = [F.SlideFeature("A", np.zeros(1))]
        with pytest.raises(EmptyIntersection):
            F.assemble_dataset(feats, _expr(["B"]))

    def test_full_match_count(self):
        ids = [f"P{i:03d}" for i in range(335)]
        feats = [F.SlideFeature(pid, np.zeros(2)) for pid in ids]
        ds = F.assemble_dataset(feats, _expr(ids))
        assert len(ds) == 335
        assert ds.dropped_features == [] and ds.dropped_expression == []

    def test_duplicate_feature_patient(self):
        feats = [F.SlideFeature("A", np.zeros(1)), F.SlideFeature("A", np.zeros(1))]
        with pytest.raises(DuplicatePatient):
            F.assemble_dataset(feats, _expr(["A"]))
