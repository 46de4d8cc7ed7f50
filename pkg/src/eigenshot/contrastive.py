"""Desk-scale contrastive pretraining on feature vectors.

A single shared two-layer encoder is trained with the InfoNCE objective on a
re-balanced mixture of source and target samples. "Views" of an abstract
vector are the vector plus independent Gaussian jitter. Everything is plain
numpy and deterministic given the configured seeds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .store import FeatureSet


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, step: int):
        super().__init__(f"training loss became non-finite at step {step}")
        self.step = step


@dataclass
class ContrastiveBatch:
    """Per-query embeddings for the InfoNCE loss.

    queries/positives are (B, d); negatives is (B, K, d) with K >= 0. All
    rows are expected to be (approximately) unit-norm.
    """

    queries: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    temperature: float

    def __post_init__(self) -> None:
        self.queries = np.asarray(self.queries, dtype=np.float64)
        self.positives = np.asarray(self.positives, dtype=np.float64)
        self.negatives = np.asarray(self.negatives, dtype=np.float64)
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.queries.ndim != 2 or self.positives.shape != self.queries.shape:
            raise ValueError("queries and positives must both be (B, d)")
        b, d = self.queries.shape
        if self.negatives.ndim != 3 or self.negatives.shape[0] != b or (
            self.negatives.shape[2] != d
        ):
            raise ValueError(
                f"negatives must be (B, K, {d}), got {self.negatives.shape}"
            )
        for name, arr in (
            ("queries", self.queries),
            ("positives", self.positives),
            ("negatives", self.negatives.reshape(-1, d) if self.negatives.size else None),
        ):
            if arr is None or arr.size == 0:
                continue
            norms = np.linalg.norm(arr, axis=1)
            if np.abs(norms - 1.0).max() > 1e-3:
                raise ValueError(f"{name} rows must be unit-norm")

    @property
    def num_negatives(self) -> int:
        return int(self.negatives.shape[1])


def _logits(batch: ContrastiveBatch) -> np.ndarray:
    """(B, K+1) logit matrix, positive first."""
    pos = np.einsum("bd,bd->b", batch.queries, batch.positives)
    if batch.num_negatives:
        neg = np.einsum("bd,bkd->bk", batch.queries, batch.negatives)
        logits = np.concatenate([pos[:, None], neg], axis=1)
    else:
        logits = pos[:, None]
    return logits / batch.temperature


def info_nce_loss(batch: ContrastiveBatch) -> float:
    """Mean over queries of -log softmax(positive | positive + negatives),
    computed with max-subtraction so it is finite for all valid inputs."""
    logits = _logits(batch)
    peak = logits.max(axis=1, keepdims=True)
    lse = peak[:, 0] + np.log(np.exp(logits - peak).sum(axis=1))
    return float(np.mean(lse - logits[:, 0]))


def info_nce_grad(
    batch: ContrastiveBatch,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of :func:`info_nce_loss` w.r.t. queries, positives and
    negatives (same shapes as the inputs)."""
    logits = _logits(batch)
    peak = logits.max(axis=1, keepdims=True)
    expd = np.exp(logits - peak)
    probs = expd / expd.sum(axis=1, keepdims=True)

    b = batch.queries.shape[0]
    scale = 1.0 / (batch.temperature * b)
    p_pos = probs[:, 0]

    d_pos = (p_pos - 1.0)[:, None] * batch.queries * scale
    d_query = (p_pos - 1.0)[:, None] * batch.positives
    if batch.num_negatives:
        p_neg = probs[:, 1:]
        d_query = d_query + np.einsum("bk,bkd->bd", p_neg, batch.negatives)
        d_neg = p_neg[:, :, None] * batch.queries[:, None, :] * scale
    else:
        d_neg = np.zeros_like(batch.negatives)
    return d_query * scale, d_pos, d_neg


@dataclass
class MixerConfig:
    """Sample re-balancing: the target pool is re-weighted to act as if its
    size were ``rebalance_percentage`` of the source size."""

    rebalance_percentage: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.rebalance_percentage <= 1.0:
            raise ValueError(
                "rebalance_percentage must be in (0, 1], got "
                f"{self.rebalance_percentage}"
            )


@dataclass
class StreamItem:
    vector: np.ndarray
    origin: str  # "source" | "target"
    target_index: int | None = None


class MixedStream:
    """Infinite seeded stream over source and re-balanced target samples.

    Each draw is a source sample with probability 1/(1+p) and a target sample
    with probability p/(1+p); when several target sets are given they share
    the target probability equally. With no targets the stream is pure source.
    """

    def __init__(
        self,
        source: FeatureSet,
        targets: list[FeatureSet] | None,
        cfg: MixerConfig,
    ):
        if source.n == 0:
            raise ValueError("source feature set is empty")
        targets = list(targets or [])
        for i, t in enumerate(targets):
            if t.n == 0:
                raise ValueError(f"target feature set #{i} is empty")
            if t.d != source.d:
                raise ValueError(
                    f"target #{i} dimension {t.d} != source dimension {source.d}"
                )
        self.source = source
        self.targets = targets
        self.cfg = cfg
        p = cfg.rebalance_percentage
        self.target_probability = p / (1.0 + p) if targets else 0.0
        self._rng = np.random.default_rng(cfg.seed)

    @property
    def dim(self) -> int:
        return self.source.d

    def draw(self) -> StreamItem:
        if self.targets and self._rng.random() < self.target_probability:
            t = int(self._rng.integers(len(self.targets)))
            fs = self.targets[t]
            row = int(self._rng.integers(fs.n))
            return StreamItem(fs.vectors[row], "target", t)
        row = int(self._rng.integers(self.source.n))
        return StreamItem(self.source.vectors[row], "source", None)

    def draw_vectors(self, count: int) -> np.ndarray:
        return np.stack([self.draw().vector for _ in range(count)])

    def __iter__(self):
        while True:
            yield self.draw()


def make_mixed_stream(
    source: FeatureSet,
    targets: list[FeatureSet] | None,
    cfg: MixerConfig,
) -> MixedStream:
    return MixedStream(source, targets, cfg)


class Encoder:
    """Two affine layers with tanh between; outputs are L2-normalized."""

    def __init__(self, w1: np.ndarray, b1: np.ndarray, w2: np.ndarray, b2: np.ndarray):
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64)

    @classmethod
    def initialize(
        cls, d_in: int, hidden_dim: int, embed_dim: int, seed: int = 0
    ) -> "Encoder":
        rng = np.random.default_rng(seed)
        w1 = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(hidden_dim, d_in))
        w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), size=(embed_dim, hidden_dim))
        return cls(w1, np.zeros(hidden_dim), w2, np.zeros(embed_dim))

    @property
    def d_in(self) -> int:
        return self.w1.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.w2.shape[0]

    def _forward(self, x: np.ndarray):
        hidden = np.tanh(x @ self.w1.T + self.b1)
        raw = hidden @ self.w2.T + self.b2
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        norms = np.maximum(norms, 1e-12)
        return hidden, raw, norms, raw / norms

    def encode(self, x: np.ndarray) -> np.ndarray:
        """Unit-norm embeddings, one row per input row."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ValueError(f"expected (n, {self.d_in}) inputs, got {x.shape}")
        return self._forward(x)[3]

    def encode_features(self, fs: FeatureSet) -> FeatureSet:
        return FeatureSet(list(fs.ids), self.encode(fs.vectors))

    def _backward(self, x, hidden, raw, norms, z, d_z):
        d_raw = (d_z - z * np.sum(d_z * z, axis=1, keepdims=True)) / norms
        d_w2 = d_raw.T @ hidden
        d_b2 = d_raw.sum(axis=0)
        d_hidden = d_raw @ self.w2
        d_pre = d_hidden * (1.0 - hidden**2)
        d_w1 = d_pre.T @ x
        d_b1 = d_pre.sum(axis=0)
        return d_w1, d_b1, d_w2, d_b2

    def save(self, path: str | Path) -> None:
        doc = {
            "d_in": self.d_in,
            "hidden_dim": int(self.w1.shape[0]),
            "embed_dim": self.embed_dim,
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2.tolist(),
        }
        Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Encoder":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            np.array(doc["w1"]), np.array(doc["b1"]),
            np.array(doc["w2"]), np.array(doc["b2"]),
        )


@dataclass
class TrainConfig:
    steps: int = 1500
    batch_size: int = 32
    num_negatives: int = 15
    temperature: float = 0.2
    learning_rate: float = 0.5
    augment_sigma: float = 0.1
    seed: int = 0
    hidden_dim: int = 64
    embed_dim: int = 16

    def __post_init__(self) -> None:
        for name in ("steps", "batch_size", "temperature", "learning_rate",
                     "augment_sigma", "hidden_dim", "embed_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.num_negatives < 0:
            raise ValueError("num_negatives must be >= 0")
        if self.num_negatives > self.batch_size - 1:
            raise ValueError(
                f"num_negatives {self.num_negatives} exceeds batch_size-1 "
                f"({self.batch_size - 1})"
            )


@dataclass
class TrainResult:
    encoder: Encoder
    losses: list[float] = field(default_factory=list)


def train_encoder(stream: MixedStream, hp: TrainConfig) -> TrainResult:
    """Plain-SGD contrastive training.

    Per step: draw a batch from the stream, make two jittered views of every
    sample, use view-1 embeddings as queries and view-2 embeddings as keys;
    each query's negatives are the next ``num_negatives`` keys cyclically.
    Deterministic given (stream seed, hp.seed). Raises
    :class:`TrainingDivergedError` if the loss goes non-finite.
    """
    rng = np.random.default_rng(hp.seed)
    enc = Encoder.initialize(stream.dim, hp.hidden_dim, hp.embed_dim, seed=hp.seed)
    b, k = hp.batch_size, hp.num_negatives
    neg_idx = (np.arange(b)[:, None] + 1 + np.arange(k)[None, :]) % b  # (B, K)

    losses: list[float] = []
    for step in range(hp.steps):
        base = stream.draw_vectors(b)
        view1 = base + hp.augment_sigma * rng.normal(size=base.shape)
        view2 = base + hp.augment_sigma * rng.normal(size=base.shape)

        h1, r1, n1, z1 = enc._forward(view1)
        h2, r2, n2, z2 = enc._forward(view2)

        batch = ContrastiveBatch(
            queries=z1,
            positives=z2,
            negatives=z2[neg_idx] if k else np.empty((b, 0, z2.shape[1])),
            temperature=hp.temperature,
        )
        loss = info_nce_loss(batch)
        if not np.isfinite(loss):
            raise TrainingDivergedError(step)
        losses.append(loss)

        d_q, d_pos, d_neg = info_nce_grad(batch)
        d_z1 = d_q
        d_z2 = d_pos.copy()
        if k:
            np.add.at(d_z2, neg_idx.reshape(-1), d_neg.reshape(-1, z2.shape[1]))

        g1 = enc._backward(view1, h1, r1, n1, z1, d_z1)
        g2 = enc._backward(view2, h2, r2, n2, z2, d_z2)
        enc.w1 -= hp.learning_rate * (g1[0] + g2[0])
        enc.b1 -= hp.learning_rate * (g1[1] + g2[1])
        enc.w2 -= hp.learning_rate * (g1[2] + g2[2])
        enc.b2 -= hp.learning_rate * (g1[3] + g2[3])

    return TrainResult(enc, losses)
