"""Few-shot classifier heads trained on frozen feature vectors.

These heads stand in for full model finetuning: the claim under test is that
well-clustered target features make a good classifier cheap to obtain, so the
heads operate directly in feature space. Two kinds:

* ``nearest-centroid`` -- per-class mean of the labeled features; zero
  hyperparameters, fully deterministic. Classes with no labeled samples are
  unpredictable (they can never win the argmax).
* ``linear-softmax`` -- multinomial logistic regression trained by full-batch
  gradient descent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .store import FeatureSet, LabelSet

KINDS = ("nearest-centroid", "linear-softmax")


@dataclass
class FitConfig:
    epochs: int = 200
    learning_rate: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class ClassifierModel:
    kind: str
    num_classes: int
    # nearest-centroid: classes actually seen (ascending) and their centroids
    classes: np.ndarray | None = None
    centroids: np.ndarray | None = None
    # linear-softmax
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    training_loss: list[float] = field(default_factory=list, repr=False)


@dataclass
class EvalReport:
    top1_accuracy: float
    mean_class_accuracy: float
    per_class_accuracy: list[float | None]

    def to_dict(self) -> dict:
        return {
            "top1_accuracy": self.top1_accuracy,
            "mean_class_accuracy": self.mean_class_accuracy,
            "per_class_accuracy": self.per_class_accuracy,
        }


def fit(
    features: FeatureSet,
    labels: LabelSet,
    kind: str = "nearest-centroid",
    hp: FitConfig | None = None,
) -> ClassifierModel:
    """Train a head on the labeled subset of ``features``."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    if len(labels) == 0:
        raise ValueError("need at least one labeled sample")
    labels.check_covers(features)
    hp = hp or FitConfig()
    c = labels.num_classes

    if kind == "nearest-centroid":
        present = sorted({lab for lab in labels.labels.values()})
        centroids = np.empty((len(present), features.d), dtype=np.float64)
        for row, cls in enumerate(present):
            # canonical id order makes the fit order-independent bit for bit
            member_ids = sorted(sid for sid, lab in labels.labels.items() if lab == cls)
            centroids[row] = features.subset(member_ids).vectors.mean(axis=0)
        return ClassifierModel(
            kind=kind,
            num_classes=c,
            classes=np.array(present, dtype=np.int64),
            centroids=centroids,
        )

    # linear-softmax: full-batch gradient descent on cross-entropy
    ids = sorted(labels.labels)
    x = features.subset(ids).vectors
    y = np.array([labels[sid] for sid in ids], dtype=np.int64)
    n = len(ids)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), y] = 1.0

    rng = np.random.default_rng(hp.seed)
    w = rng.normal(0.0, 0.01, size=(c, features.d))
    b = np.zeros(c)
    losses: list[float] = []
    for _ in range(hp.epochs):
        scores = x @ w.T + b
        scores -= scores.max(axis=1, keepdims=True)
        expd = np.exp(scores)
        probs = expd / expd.sum(axis=1, keepdims=True)
        losses.append(float(-np.mean(np.log(probs[np.arange(n), y] + 1e-300))))
        gap = (probs - onehot) / n
        w -= hp.learning_rate * (gap.T @ x)
        b -= hp.learning_rate * gap.sum(axis=0)
    return ClassifierModel(
        kind=kind, num_classes=c, weights=w, bias=b, training_loss=losses
    )


def predict(model: ClassifierModel, features: FeatureSet) -> np.ndarray:
    """Per-sample class labels; score ties break to the lowest class index."""
    x = features.vectors
    if model.kind == "nearest-centroid":
        if x.shape[1] != model.centroids.shape[1]:
            raise ValueError(
                f"dimension mismatch: features d={x.shape[1]}, "
                f"model d={model.centroids.shape[1]}"
            )
        diff = x[:, None, :] - model.centroids[None, :, :]
        d2 = np.einsum("ncd,ncd->nc", diff, diff)
        return model.classes[np.argmin(d2, axis=1)]
    if x.shape[1] != model.weights.shape[1]:
        raise ValueError(
            f"dimension mismatch: features d={x.shape[1]}, "
            f"model d={model.weights.shape[1]}"
        )
    scores = x @ model.weights.T + model.bias
    return np.argmax(scores, axis=1)


def evaluate(
    model: ClassifierModel, features: FeatureSet, labels: LabelSet
) -> EvalReport:
    """Top-1 and unweighted mean per-class accuracy over ``features``."""
    if features.n == 0:
        raise ValueError("evaluation set is empty")
    missing = [sid for sid in features.ids if sid not in labels]
    if missing:
        raise ValueError(f"labels do not cover evaluated ids: {missing[:5]}")
    truth = np.array([labels[sid] for sid in features.ids], dtype=np.int64)
    pred = predict(model, features)

    top1 = float(np.mean(pred == truth))
    per_class: list[float | None] = []
    present = []
    for cls in range(labels.num_classes):
        mask = truth == cls
        if not mask.any():
            per_class.append(None)
            continue
        acc = float(np.mean(pred[mask] == cls))
        per_class.append(acc)
        present.append(acc)
    return EvalReport(
        top1_accuracy=top1,
        mean_class_accuracy=float(np.mean(present)),
        per_class_accuracy=per_class,
    )


def model_to_dict(model: ClassifierModel) -> dict:
    doc: dict = {"kind": model.kind, "num_classes": model.num_classes}
    if model.kind == "nearest-centroid":
        doc["classes"] = model.classes.tolist()
        doc["centroids"] = model.centroids.tolist()
    else:
        doc["weights"] = model.weights.tolist()
        doc["bias"] = model.bias.tolist()
    return doc


def model_from_dict(doc: dict) -> ClassifierModel:
    kind = doc["kind"]
    if kind == "nearest-centroid":
        return ClassifierModel(
            kind=kind,
            num_classes=int(doc["num_classes"]),
            classes=np.array(doc["classes"], dtype=np.int64),
            centroids=np.array(doc["centroids"], dtype=np.float64),
        )
    return ClassifierModel(
        kind=kind,
        num_classes=int(doc["num_classes"]),
        weights=np.array(doc["weights"], dtype=np.float64),
        bias=np.array(doc["bias"], dtype=np.float64),
    )


def save_model(model: ClassifierModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> ClassifierModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
