"""Centroid caller and the four-learner soft-voting classifier."""

import hashlib
import math

import numpy as np
import pytest

from histexpr import subtype as ST
from histexpr.errors import ClassTooSmall, LengthMismatch, MissingSubtype, ShapeMismatch


def blobs(rng, centers, n_per_class, scale=0.5):
    xs, labels = [], []
    for name, center in centers.items():
        xs.append(center + rng.normal(scale=scale, size=(n_per_class, len(center))))
        labels.extend([name] * n_per_class)
    return np.vstack(xs), np.array(labels)


def four_blob_centers(dims=8, spacing=4.0):
    """Class centers pairwise ``spacing`` apart (scaled basis vectors)."""
    names = ["LumA", "LumB", "Basal", "HER2"]
    return {name: spacing / math.sqrt(2.0) * np.eye(dims)[k]
            for k, name in enumerate(names)}


class TestFitCentroids:
    def test_identical_clusters_give_centered_rows(self):
        row_a = np.array([1.0, 5.0, 2.0])
        row_b = np.array([4.0, 0.0, 3.0])
        values = np.vstack([row_a, row_a, row_b, row_b])
        labels = ["LumA", "LumA", "LumB", "LumB"]
        model = ST.fit_centroids(values, labels, gene_order=["g1", "g2", "g3"])
        medians = np.median(values, axis=0)
        np.testing.assert_allclose(model.centroids[0], row_a - medians)
        np.testing.assert_allclose(model.centroids[1], row_b - medians)

    def test_label_permutation_swaps_centroids(self):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(8, 4))
        labels = np.array(["LumA"] * 4 + ["LumB"] * 4)
        swapped = np.array(["LumB"] * 4 + ["LumA"] * 4)
        m1 = ST.fit_centroids(values, labels, gene_order=list("abcd"))
        m2 = ST.fit_centroids(values, swapped, gene_order=list("abcd"))
        np.testing.assert_allclose(m1.centroids[0], m2.centroids[1])
        np.testing.assert_allclose(m1.centroids[1], m2.centroids[0])

    def test_gaussian_blob_centers_recovered(self):
        rng = np.random.default_rng(1)
        centers = four_blob_centers(dims=8)
        values, labels = blobs(rng, centers, n_per_class=50, scale=0.5)
        model = ST.fit_centroids(values, labels, gene_order=[f"g{i}" for i in range(8)])
        medians = np.median(values, axis=0)
        for k, name in enumerate(model.subtypes):
            np.testing.assert_allclose(
                model.centroids[k], centers[name] - medians, atol=0.2
            )

    def test_undersized_class_rejected(self):
        values = np.zeros((3, 2))
        with pytest.raises(MissingSubtype):
            ST.fit_centroids(values, ["LumA", "LumA", "LumB"], gene_order=["a", "b"])

    def test_explicit_subtype_absent(self):
        rng = np.random.default_rng(2)
        values = rng.normal(size=(4, 2))
        with pytest.raises(MissingSubtype):
            ST.fit_centroids(values, ["LumA"] * 4, gene_order=["a", "b"],
                             subtypes=("LumA", "Basal"))

    def test_canonical_order(self):
        rng = np.random.default_rng(3)
        values = rng.normal(size=(8, 3))
        labels = ["HER2", "HER2", "LumA", "LumA", "Basal", "Basal", "LumB", "LumB"]
        model = ST.fit_centroids(values, labels, gene_order=["a", "b", "c"])
        assert model.subtypes == ("LumA", "LumB", "Basal", "HER2")


class TestCallSubtype:
    def model(self):
        rng = np.random.default_rng(4)
        centers = {name: rng.uniform(-2, 2, size=15) + 4.0 * k
                   for k, name in enumerate(["LumA", "LumB", "Basal", "HER2"])}
        values, labels = blobs(rng, centers, n_per_class=50, scale=0.5)
        model = ST.fit_centroids(values, labels,
                                 gene_order=[f"g{i}" for i in range(15)])
        return model, centers, values, labels

    def test_centroid_maps_to_itself(self):
        model, *_ = self.model()
        sample = model.centroids[2] + model.centering_medians
        name, sims = ST.call_subtype(model, sample)
        assert name == model.subtypes[2]
        assert sims[2] == pytest.approx(1.0)

    def test_anticorrelated_sample_not_luma(self):
        model, *_ = self.model()
        sample = -model.centroids[0] + model.centering_medians
        name, sims = ST.call_subtype(model, sample)
        assert name != "LumA"
        assert sims[0] == pytest.approx(-1.0)

    def test_blob_agreement(self):
        model, centers, values, labels = self.model()
        rng = np.random.default_rng(5)
        hits = 0
        n = 200
        for _ in range(n):
            name = ["LumA", "LumB", "Basal", "HER2"][rng.integers(0, 4)]
            sample = centers[name] + rng.normal(scale=0.5, size=15)
            hits += ST.call_subtype(model, sample)[0] == name
        assert hits / n >= 0.95

    def test_rank_preserving_centered_transform_invariance(self):
        # similarity uses ranks of the median-centered sample, so any
        # strictly increasing transform of the centered values is neutral
        model, *_ = self.model()
        rng = np.random.default_rng(6)
        sample = rng.normal(size=15) + model.centering_medians
        centered = sample - model.centering_medians
        warped = model.centering_medians + np.sinh(centered) * 3.0
        name1, sims1 = ST.call_subtype(model, sample)
        name2, sims2 = ST.call_subtype(model, warped)
        assert name1 == name2
        np.testing.assert_allclose(sims1, sims2, atol=1e-12)

    def test_length_mismatch(self):
        model, *_ = self.model()
        with pytest.raises(LengthMismatch):
            ST.call_subtype(model, np.zeros(3))

    def test_training_accuracy_at_least_euclidean_baseline(self):
        rng = np.random.default_rng(21)
        centers = {name: rng.uniform(-2, 2, size=12) + 4.0 * k
                   for k, name in enumerate(["LumA", "LumB", "Basal", "HER2"])}
        values, labels = blobs(rng, centers, n_per_class=40, scale=0.3)
        model = ST.fit_centroids(values, labels,
                                 gene_order=[f"g{i}" for i in range(12)])
        rank_hits = sum(ST.call_subtype(model, row)[0] == lab
                        for row, lab in zip(values, labels))
        centered = values - model.centering_medians
        euclid_hits = 0
        for row, lab in zip(centered, labels):
            dists = np.linalg.norm(model.centroids - row, axis=1)
            euclid_hits += model.subtypes[int(np.argmin(dists))] == lab
        assert rank_hits >= euclid_hits

    def test_json_round_trip(self, tmp_path):
        model, *_ = self.model()
        path = tmp_path / "centroids.json"
        model.save(path)
        loaded = ST.CentroidModel.load(path)
        assert loaded.subtypes == model.subtypes
        np.testing.assert_allclose(loaded.centroids, model.centroids)
        np.testing.assert_allclose(loaded.centering_medians, model.centering_medians)


def forest_fingerprint(forest):
    digest = hashlib.sha256()
    for tree in forest.estimators_:
        digest.update(tree.tree_.feature.tobytes())
        digest.update(tree.tree_.threshold.tobytes())
    return digest.hexdigest()


class TestVoting:
    def separable(self):
        rng = np.random.default_rng(7)
        centers = {name: 6.0 * np.eye(4)[k] for k, name in
                   enumerate(["LumA", "LumB", "Basal", "HER2"])}
        return blobs(rng, centers, n_per_class=30, scale=0.5)

    def test_training_accuracy_on_separable_blobs(self):
        values, labels = self.separable()
        model = ST.fit_voting(values, labels, seed=0)
        pred, simplices = ST.predict_voting(model, values)
        report = ST.classification_report(labels, pred, simplices,
                                          classes=model.classes)
        assert report.accuracy >= 0.98

    def test_identical_learners_vote_is_that_simplex(self):
        values, labels = self.separable()
        base = ST.fit_voting(values, labels, seed=0).logistic
        model = ST.VotingModel(classes=("LumA", "LumB", "Basal", "HER2"),
                               logistic=base, lda=base, mlp=base, forest=base)
        _, vote = ST.predict_voting(model, values[:10])
        np.testing.assert_allclose(
            vote, ST._proba_in_order(base, values[:10], model.classes)
        )

    def test_probabilities_form_simplex(self):
        values, labels = self.separable()
        model = ST.fit_voting(values, labels, seed=1)
        _, vote = ST.predict_voting(model, values)
        np.testing.assert_allclose(vote.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(vote >= 0)

    def test_forest_refit_reproducible(self):
        values, labels = self.separable()
        m1 = ST.fit_voting(values, labels, seed=42)
        m2 = ST.fit_voting(values, labels, seed=42)
        assert forest_fingerprint(m1.forest) == forest_fingerprint(m2.forest)

    def test_class_too_small(self):
        values = np.zeros((8, 2))
        labels = ["LumA"] * 4 + ["LumB"] * 4
        with pytest.raises(ClassTooSmall):
            ST.fit_voting(values, labels, seed=0)


class TestClassificationReport:
    def test_perfect_predictions(self):
        labels = np.array(["LumA", "LumB", "Basal", "HER2"] * 3)
        simplices = np.zeros((12, 4))
        order = ("LumA", "LumB", "Basal", "HER2")
        for i, lab in enumerate(labels):
            simplices[i, order.index(lab)] = 1.0
        rep = ST.classification_report(labels, labels.copy(), simplices, classes=order)
        assert rep.accuracy == 1.0 and rep.macro_f1 == 1.0
        assert all(v == 1.0 for v in rep.per_class_auroc.values())

    def test_uniform_simplices_auroc_half(self):
        labels = np.array(["LumA", "LumB"] * 4)
        pred = np.array(["LumA"] * 8)
        simplices = np.full((8, 2), 0.5)
        rep = ST.classification_report(labels, pred, simplices,
                                       classes=("LumA", "LumB"))
        assert all(v == 0.5 for v in rep.per_class_auroc.values())

    def test_twelve_sample_hand_computed_f1(self):
        true = ["LumA"] * 3 + ["LumB"] * 3 + ["Basal"] * 3 + ["HER2"] * 3
        pred = ["LumA", "LumA", "LumB", "LumB", "LumB", "Basal",
                "Basal", "Basal", "Basal", "HER2", "LumA", "HER2"]
        simplices = np.full((12, 4), 0.25)
        rep = ST.classification_report(true, pred, simplices,
                                       classes=("LumA", "LumB", "Basal", "HER2"))
        assert rep.accuracy == pytest.approx(9 / 12)
        assert rep.per_class_f1["LumA"] == pytest.approx(2 / 3)
        assert rep.per_class_f1["LumB"] == pytest.approx(2 / 3)
        assert rep.per_class_f1["Basal"] == pytest.approx(6 / 7)
        assert rep.per_class_f1["HER2"] == pytest.approx(4 / 5)
        assert rep.macro_f1 == pytest.approx(157 / 210)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ST.classification_report(["LumA", "LumB"], ["LumA"], np.zeros((1, 2)))
