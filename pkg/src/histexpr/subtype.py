"""Molecular subtype calling from (predicted) gene expression.

Two classifiers live here: a rank-correlation nearest-centroid caller over
the PAM50-flagged panel genes, and a four-learner soft-voting classifier
(logistic regression, LDA, one-hidden-layer MLP, random forest) whose vote
is the arithmetic mean of the four class-probability vectors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.discriminant_analysis import LinearDiscriminantAnalysis
from sklearn.ensemble import RandomForestClassifier
from sklearn.linear_model import LogisticRegression
from sklearn.neural_network import MLPClassifier

from .errors import ClassTooSmall, LengthMismatch, MissingSubtype, ShapeMismatch, SingleClass
from .metrics import auroc, spearman

SUBTYPE_ORDER = ("LumA", "LumB", "Basal", "HER2")


def _canonical_class_order(labels) -> tuple[str, ...]:
    present = sorted(set(labels))
    known = [s for s in SUBTYPE_ORDER if s in present]
    other = [s for s in present if s not in SUBTYPE_ORDER]
    return tuple(known + other)


@dataclass
class CentroidModel:
    """Per-subtype mean profiles over median-centered training expression."""

    subtypes: tuple[str, ...]
    gene_order: tuple[str, ...]
    centroids: np.ndarray           # (K, Gp)
    centering_medians: np.ndarray   # (Gp,)

    def to_json(self) -> str:
        payload = {
            "subtypes": list(self.subtypes),
            "gene_order": list(self.gene_order),
            "centroids": {
                s: [float(v) for v in row]
                for s, row in zip(self.subtypes, self.centroids)
            },
            "centering_medians": [float(v) for v in self.centering_medians],
        }
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CentroidModel":
        raw = json.loads(text)
        subtypes = tuple(raw["subtypes"])
        return cls(
            subtypes=subtypes,
            gene_order=tuple(raw["gene_order"]),
            centroids=np.array([raw["centroids"][s] for s in subtypes]),
            centering_medians=np.asarray(raw["centering_medians"], dtype=np.float64),
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CentroidModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def fit_centroids(values: np.ndarray, labels, gene_order,
                  subtypes=None) -> CentroidModel:
    """Learn per-class centroids from expression rows.

    Expression is centered by the per-gene training median first; each
    centroid is the mean of its class's centered rows. Every class needs at
    least two samples.
    """
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels)
    if values.ndim != 2 or values.shape[0] != len(labels):
        raise ShapeMismatch("values must be samples x genes aligned with labels")
    if subtypes is None:
        subtypes = _canonical_class_order(labels)
    else:
        subtypes = tuple(subtypes)
    counts = {s: int((labels == s).sum()) for s in subtypes}
    short = [s for s, c in counts.items() if c < 2]
    if short:
        raise MissingSubtype(f"subtypes with fewer than 2 training samples: {short}")

    medians = np.median(values, axis=0)
    centered = values - medians
    centroids = np.stack([centered[labels == s].mean(axis=0) for s in subtypes])
    return CentroidModel(
        subtypes=subtypes,
        gene_order=tuple(gene_order),
        centroids=centroids,
        centering_medians=medians,
    )


def call_subtype(model: CentroidModel, sample: np.ndarray) -> tuple[str, np.ndarray]:
    """Assign the subtype whose centroid best rank-correlates with the sample.

    Returns the winning subtype and the per-subtype Spearman similarities
    (in ``model.subtypes`` order). Ties break toward the earlier subtype.
    """
    sample = np.asarray(sample, dtype=np.float64)
    if sample.shape != (len(model.gene_order),):
        raise LengthMismatch(
            f"sample length {sample.shape} vs gene order {len(model.gene_order)}"
        )
    centered = sample - model.centering_medians
    sims = np.empty(len(model.subtypes))
    for k, centroid in enumerate(model.centroids):
        res = spearman(centered, centroid)
        sims[k] = -math.inf if math.isnan(res.rho) else res.rho
    best = int(np.argmax(sims))  # first maximum wins: fixed-order tie-break
    return model.subtypes[best], sims


@dataclass
class VotingModel:
    """Soft-voting ensemble over four seeded scikit-learn base learners."""

    classes: tuple[str, ...]
    logistic: LogisticRegression
    lda: LinearDiscriminantAnalysis
    mlp: MLPClassifier
    forest: RandomForestClassifier

    @property
    def learners(self):
        return [self.logistic, self.lda, self.mlp, self.forest]


def fit_voting(features: np.ndarray, labels, seed: int = 0,
               mlp_hidden: int = 64, mlp_epochs: int = 200,
               forest_trees: int = 100, lr_l2: float = 1.0) -> VotingModel:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] != len(labels):
        raise ShapeMismatch("features must be samples x dims aligned with labels")
    classes = _canonical_class_order(labels)
    for c in classes:
        n_c = int((labels == c).sum())
        if n_c < 5:
            raise ClassTooSmall(f"class {c!r} has {n_c} samples, need >= 5")

    logistic = LogisticRegression(C=lr_l2, max_iter=2000, random_state=seed)
    lda = LinearDiscriminantAnalysis()
    mlp = MLPClassifier(hidden_layer_sizes=(mlp_hidden,), activation="relu",
                        solver="adam", learning_rate_init=1e-3,
                        max_iter=mlp_epochs, random_state=seed)
    forest = RandomForestClassifier(n_estimators=forest_trees, criterion="gini",
                                    bootstrap=True, max_features="sqrt",
                                    random_state=seed)
    for learner in (logistic, lda, mlp, forest):
        learner.fit(features, labels)
    return VotingModel(classes=classes, logistic=logistic, lda=lda,
                       mlp=mlp, forest=forest)


def _proba_in_order(learner, features, classes) -> np.ndarray:
    proba = learner.predict_proba(features)
    col = {c: i for i, c in enumerate(learner.classes_)}
    out = np.zeros((features.shape[0], len(classes)))
    for k, c in enumerate(classes):
        if c in col:
            out[:, k] = proba[:, col[c]]
    return out


def predict_voting(model: VotingModel, features: np.ndarray) -> tuple[list[str], np.ndarray]:
    """Average the four base simplices and take the first-maximum class."""
    features = np.asarray(features, dtype=np.float64)
    simplices = [_proba_in_order(lrn, features, model.classes)
                 for lrn in model.learners]
    vote = np.mean(simplices, axis=0)
    winners = [model.classes[int(k)] for k in np.argmax(vote, axis=1)]
    return winners, vote


@dataclass
class ClassificationReport:
    classes: tuple[str, ...]
    accuracy: float
    macro_f1: float
    per_class_f1: dict[str, float]
    per_class_auroc: dict[str, float]


def classification_report(true_labels, pred_labels, simplices,
                          classes=None) -> ClassificationReport:
    """Accuracy, macro-F1, and one-vs-rest AUROC from soft predictions."""
    true_labels = np.asarray(true_labels)
    pred_labels = np.asarray(pred_labels)
    simplices = np.asarray(simplices, dtype=np.float64)
    if not (len(true_labels) == len(pred_labels) == simplices.shape[0]):
        raise ShapeMismatch("labels and simplices must align")
    if len(set(true_labels)) < 2:
        raise ShapeMismatch("need >= 2 classes present in true labels")
    if classes is None:
        classes = _canonical_class_order(np.concatenate([true_labels, pred_labels]))
    else:
        classes = tuple(classes)
    if simplices.shape[1] != len(classes):
        raise ShapeMismatch(
            f"simplices have {simplices.shape[1]} columns for {len(classes)} classes"
        )

    accuracy = float(np.mean(true_labels == pred_labels))
    f1s: dict[str, float] = {}
    aurocs: dict[str, float] = {}
    for k, c in enumerate(classes):
        tp = int(np.sum((pred_labels == c) & (true_labels == c)))
        fp = int(np.sum((pred_labels == c) & (true_labels != c)))
        fn = int(np.sum((pred_labels != c) & (true_labels == c)))
        f1s[c] = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) > 0 else 0.0
        try:
            aurocs[c] = auroc(simplices[:, k], (true_labels == c).astype(int))
        except SingleClass:
            aurocs[c] = math.nan
    macro_f1 = float(np.mean([f1s[c] for c in classes]))
    return ClassificationReport(
        classes=classes,
        accuracy=accuracy,
        macro_f1=macro_f1,
        per_class_f1=f1s,
        per_class_auroc=aurocs,
    )
