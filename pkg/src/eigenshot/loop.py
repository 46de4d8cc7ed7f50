"""Budgeted annotation loop: cluster, pick representative samples, collect
labels, refit the classifier, repeat.

Budget protocol: one seed label per class up front, then ``epsilon`` extra
annotations per class on average, spread over evolution steps of
``per_step`` annotations per class each (step quota = per_step * num_classes).
The anchors -- feature vectors of everything labeled so far -- enter each
step's clustering as frozen centers, so new clusters form only where existing
labels do not already cover the data.

State transitions are pure: ``queue_selection`` and ``submit_labels`` return
new :class:`LoopState` objects and leave their input untouched, which makes a
failed submit trivially atomic and lets read-only snapshots be served
concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Protocol

import numpy as np

from . import classifier as clf
from .cluster import ackmeans, bcubed_precision
from .store import FeatureSet, LabelSet

STRATEGIES = ("eigen", "random", "oracle-balanced")


class AnnotatorFailure(RuntimeError):
    """An annotator raised; the loop state was checkpointed before aborting."""

    def __init__(self, message: str, checkpoint: Path | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint


class Annotator(Protocol):
    """Anything that can turn a sample id into a class label."""

    def __call__(self, sample_id: str, asset_uri: str | None = None) -> int: ...


class OracleAnnotator:
    """Answers from a ground-truth label set."""

    def __init__(self, truth: LabelSet):
        self.truth = truth

    def __call__(self, sample_id: str, asset_uri: str | None = None) -> int:
        return self.truth[sample_id]


@dataclass(frozen=True)
class BudgetLedger:
    """Annotation budget arithmetic.

    cap = num_classes * (1 + epsilon); each full evolution step selects
    per_step * num_classes samples. epsilon must be divisible by per_step
    unless ``allow_remainder`` is set, in which case the final step selects
    whatever is left.
    """

    num_classes: int
    epsilon: int
    per_step: int
    allow_remainder: bool = False

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.epsilon < 1:
            raise ValueError("epsilon must be >= 1")
        if self.per_step < 1:
            raise ValueError("per_step must be >= 1")
        if self.epsilon % self.per_step and not self.allow_remainder:
            raise ValueError(
                f"epsilon {self.epsilon} is not divisible by per_step "
                f"{self.per_step}; pass allow_remainder=True to take the "
                "remainder in a short final step"
            )

    @property
    def step_quota(self) -> int:
        return self.per_step * self.num_classes

    @property
    def kappa_max(self) -> int:
        return -(-self.epsilon // self.per_step)  # ceil

    @property
    def cap(self) -> int:
        return self.num_classes * (1 + self.epsilon)

    def quota_for_step(self, kappa: int) -> int:
        """Selection size for the step that starts at evolution count kappa."""
        if not 0 <= kappa < self.kappa_max:
            raise ValueError(f"kappa {kappa} outside [0, {self.kappa_max})")
        remaining = self.epsilon * self.num_classes - kappa * self.step_quota
        return min(self.step_quota, remaining)

    def to_dict(self) -> dict:
        return {
            "C": self.num_classes,
            "epsilon": self.epsilon,
            "b": self.per_step,
            "allow_remainder": self.allow_remainder,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "BudgetLedger":
        return cls(
            num_classes=int(doc["C"]),
            epsilon=int(doc["epsilon"]),
            per_step=int(doc["b"]),
            allow_remainder=bool(doc.get("allow_remainder", False)),
        )


@dataclass
class StepRecord:
    kappa: int
    selected: list[str]
    bcubed: float | None = None
    eval_top1: float | None = None
    eval_mean_class: float | None = None

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "selected": self.selected,
            "bcubed": self.bcubed,
            "eval_top1": self.eval_top1,
            "eval_mean_class": self.eval_mean_class,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "StepRecord":
        return cls(
            kappa=int(doc["kappa"]),
            selected=list(doc["selected"]),
            bcubed=doc.get("bcubed"),
            eval_top1=doc.get("eval_top1"),
            eval_mean_class=doc.get("eval_mean_class"),
        )


@dataclass
class LoopState:
    """Snapshot of one annotation run. Treated as immutable."""

    kappa: int
    anchor_ids: list[str]
    labels: LabelSet
    pending: list[str]
    classifier: clf.ClassifierModel | None
    history: list[StepRecord] = field(default_factory=list)

    @property
    def spent(self) -> int:
        return len(self.anchor_ids)

    def labeled_ids(self) -> set[str]:
        return set(self.anchor_ids)

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "anchor_ids": self.anchor_ids,
            "labels": dict(self.labels.labels),
            "num_classes": self.labels.num_classes,
            "pending": self.pending,
            "classifier": (
                clf.model_to_dict(self.classifier) if self.classifier else None
            ),
            "history": [rec.to_dict() for rec in self.history],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "LoopState":
        return cls(
            kappa=int(doc["kappa"]),
            anchor_ids=list(doc["anchor_ids"]),
            labels=LabelSet(
                {k: int(v) for k, v in doc["labels"].items()},
                int(doc["num_classes"]),
            ),
            pending=list(doc["pending"]),
            classifier=(
                clf.model_from_dict(doc["classifier"]) if doc["classifier"] else None
            ),
            history=[StepRecord.from_dict(r) for r in doc["history"]],
        )


def step_seed(run_seed: int, kappa: int) -> int:
    """Stable per-step seed so resumed runs reselect identically."""
    return int(np.random.SeedSequence([run_seed, kappa]).generate_state(1)[0])


class EigenLoop:
    """Owns the working feature space, budget, and evaluation hooks for a run.

    ``truth`` (when available, e.g. synthetic scenarios or oracle runs) is
    used only for the per-step cluster-quality metric and the oracle-balanced
    baseline -- never by eigen or random selection.
    """

    def __init__(
        self,
        features: FeatureSet,
        ledger: BudgetLedger,
        *,
        classifier_kind: str = "nearest-centroid",
        eval_features: FeatureSet | None = None,
        eval_labels: LabelSet | None = None,
        truth: LabelSet | None = None,
        run_seed: int = 0,
        t_max: int = 100,
    ):
        if (eval_features is None) != (eval_labels is None):
            raise ValueError("eval_features and eval_labels go together")
        self.features = features
        self.ledger = ledger
        self.classifier_kind = classifier_kind
        self.eval_features = eval_features
        self.eval_labels = eval_labels
        self.truth = truth
        self.run_seed = run_seed
        self.t_max = t_max

    # ------------------------------------------------------------------ setup

    def init_loop(self, seeds: LabelSet) -> LoopState:
        """Start a run from exactly one labeled sample per class."""
        ledger = self.ledger
        if seeds.num_classes != ledger.num_classes:
            raise ValueError(
                f"seed label set has C={seeds.num_classes}, "
                f"ledger has C={ledger.num_classes}"
            )
        by_class: dict[int, list[str]] = {}
        for sid, lab in seeds.labels.items():
            if sid not in self.features:
                raise ValueError(f"seed id {sid!r} not in the target feature set")
            by_class.setdefault(lab, []).append(sid)
        dupes = {c: ids for c, ids in by_class.items() if len(ids) > 1}
        if dupes:
            raise ValueError(f"more than one seed for class(es) {sorted(dupes)}")
        missing = [c for c in range(ledger.num_classes) if c not in by_class]
        if missing:
            raise ValueError(f"no seed sample for class(es) {missing}")

        anchor_ids = sorted(seeds.labels)
        labels = LabelSet(dict(seeds.labels), ledger.num_classes)
        model = self._fit(labels)
        return LoopState(
            kappa=0,
            anchor_ids=anchor_ids,
            labels=labels,
            pending=[],
            classifier=model,
        )

    # -------------------------------------------------------------- selection

    def unlabeled_ids(self, state: LoopState) -> list[str]:
        taken = state.labeled_ids() | set(state.pending)
        return [sid for sid in self.features.ids if sid not in taken]

    def selection_size(self, state: LoopState) -> int:
        pool = len(self.unlabeled_ids(state))
        return min(self.ledger.quota_for_step(state.kappa), pool)

    def select_eigen_samples(
        self, state: LoopState, seed: int | None = None
    ) -> list[str]:
        """Cluster with current anchors frozen; return, per new cluster, the
        unlabeled sample closest to its center (ties to the lowest id)."""
        self._check_can_select(state)
        count = self.selection_size(state)
        seed = step_seed(self.run_seed, state.kappa) if seed is None else seed

        anchors = self.features.subset(state.anchor_ids).vectors
        # D^2-weighted init: new clusters should form among samples far from
        # the anchors, not split an already-anchored region
        model = ackmeans(
            self.features, anchors, count, t_max=self.t_max, seed=seed,
            init="kmeanspp",
        )
        m = model.num_anchors
        labeled = state.labeled_ids()
        assign = model.assignment
        chosen: list[str] = []
        taken: set[str] = set()
        for j in range(m, m + count):
            members = [
                sid
                for sid in self.features.ids
                if assign[sid] == j and sid not in labeled and sid not in taken
            ]
            if not members:
                # cluster ended up with no available unlabeled member; fall
                # back to the nearest remaining unlabeled sample overall
                members = [
                    sid
                    for sid in self.features.ids
                    if sid not in labeled and sid not in taken
                ]
            if not members:
                raise ValueError(
                    f"no unlabeled sample available for new cluster {j}"
                )
            sub = self.features.subset(members)
            diff = sub.vectors - model.centers[j]
            d2 = np.einsum("nd,nd->n", diff, diff)
            best = d2.min()
            best_id = min(sid for sid, dd in zip(members, d2) if dd == best)
            chosen.append(best_id)
            taken.add(best_id)
        return chosen

    def select_random(self, state: LoopState, seed: int | None = None) -> list[str]:
        """Uniform pick over the unlabeled pool; no class-balance guarantee."""
        self._check_can_select(state)
        count = self.selection_size(state)
        seed = step_seed(self.run_seed, state.kappa) if seed is None else seed
        rng = np.random.default_rng(seed)
        pool = self.unlabeled_ids(state)
        picked = rng.choice(len(pool), size=count, replace=False)
        return [pool[i] for i in picked]

    def select_oracle_balanced(
        self, state: LoopState, seed: int | None = None
    ) -> list[str]:
        """Class-balanced pick using ground-truth class membership of the
        unlabeled pool (the idealized baseline)."""
        if self.truth is None:
            raise ValueError("oracle-balanced selection needs ground-truth labels")
        self._check_can_select(state)
        count = self.selection_size(state)
        seed = step_seed(self.run_seed, state.kappa) if seed is None else seed
        rng = np.random.default_rng(seed)

        pool = self.unlabeled_ids(state)
        by_class: dict[int, list[str]] = {c: [] for c in range(self.ledger.num_classes)}
        for sid in pool:
            by_class[self.truth[sid]].append(sid)

        c = self.ledger.num_classes
        base, extra = divmod(count, c)
        class_order = rng.permutation(c)
        shares = {int(cls): base for cls in range(c)}
        for cls in class_order[:extra]:
            shares[int(cls)] += 1

        chosen: list[str] = []
        shortfall = 0
        for cls in range(c):
            members = by_class[cls]
            want = shares[cls]
            take = min(want, len(members))
            shortfall += want - take
            if take:
                picked = rng.choice(len(members), size=take, replace=False)
                chosen.extend(members[i] for i in picked)
        if shortfall:
            leftovers = [sid for sid in pool if sid not in set(chosen)]
            picked = rng.choice(len(leftovers), size=shortfall, replace=False)
            chosen.extend(leftovers[i] for i in picked)
        return chosen

    def select(self, state: LoopState, strategy: str, seed: int | None = None):
        if strategy == "eigen":
            return self.select_eigen_samples(state, seed)
        if strategy == "random":
            return self.select_random(state, seed)
        if strategy == "oracle-balanced":
            return self.select_oracle_balanced(state, seed)
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")

    def _check_can_select(self, state: LoopState) -> None:
        if state.pending:
            raise ValueError("previous selection is still awaiting labels")
        if state.kappa >= self.ledger.kappa_max:
            raise ValueError(
                f"budget exhausted: kappa={state.kappa} reached kappa_max"
            )
        if not self.unlabeled_ids(state):
            raise ValueError("no unlabeled samples left")

    # ------------------------------------------------------------ transitions

    def queue_selection(self, state: LoopState, ids: list[str]) -> LoopState:
        if state.pending:
            raise ValueError("a selection is already queued")
        if len(set(ids)) != len(ids):
            raise ValueError("queued ids must be distinct")
        labeled = state.labeled_ids()
        bad = [sid for sid in ids if sid in labeled or sid not in self.features]
        if bad:
            raise ValueError(f"ids not queueable (labeled or unknown): {bad[:5]}")
        if state.spent + len(ids) > self.ledger.cap:
            raise ValueError(
                f"queuing {len(ids)} ids would exceed the budget cap "
                f"{self.ledger.cap}"
            )
        return replace(state, pending=list(ids))

    def submit_labels(self, state: LoopState, answers: Mapping[str, int]) -> LoopState:
        """Fold a complete set of answers for the pending queue into the run:
        anchors grow, the classifier is refit, metrics are appended. The input
        state is untouched; errors leave no partial effect."""
        if not state.pending:
            raise ValueError("nothing is pending annotation")
        pending_set = set(state.pending)
        got = set(answers)
        if got != pending_set:
            missing = sorted(pending_set - got)[:5]
            surplus = sorted(got - pending_set)[:5]
            raise ValueError(
                f"answers must cover exactly the pending queue "
                f"(missing {missing}, unexpected {surplus})"
            )
        c = self.ledger.num_classes
        bad = {sid: lab for sid, lab in answers.items() if not 0 <= int(lab) < c}
        if bad:
            raise ValueError(f"labels outside [0, {c}): {bad}")
        if state.spent + len(answers) > self.ledger.cap:
            raise ValueError("submit would exceed the budget cap")

        new_labels = LabelSet(
            {**state.labels.labels, **{k: int(v) for k, v in answers.items()}}, c
        )
        new_anchors = state.anchor_ids + list(state.pending)
        model = self._fit(new_labels)
        kappa = state.kappa + 1

        record = StepRecord(kappa=kappa, selected=list(state.pending))
        if self.truth is not None:
            anchors = self.features.subset(new_anchors).vectors
            voronoi = ackmeans(self.features, anchors, 0, t_max=1, seed=0)
            record.bcubed = bcubed_precision(voronoi.assignment, self.truth).bcubed_precision
        if self.eval_features is not None:
            report = clf.evaluate(model, self.eval_features, self.eval_labels)
            record.eval_top1 = report.top1_accuracy
            record.eval_mean_class = report.mean_class_accuracy

        return LoopState(
            kappa=kappa,
            anchor_ids=new_anchors,
            labels=new_labels,
            pending=[],
            classifier=model,
            history=state.history + [record],
        )

    def _fit(self, labels: LabelSet) -> clf.ClassifierModel:
        return clf.fit(self.features, labels, kind=self.classifier_kind)

    # ------------------------------------------------------------------- runs

    def run_loop(
        self,
        seeds: LabelSet,
        annotator: Annotator,
        strategy: str = "eigen",
        checkpoint_dir: str | Path | None = None,
    ) -> LoopState:
        state = self.init_loop(seeds)
        self._checkpoint(state, checkpoint_dir, strategy)
        return self.run_from(state, annotator, strategy, checkpoint_dir)

    def run_from(
        self,
        state: LoopState,
        annotator: Annotator,
        strategy: str = "eigen",
        checkpoint_dir: str | Path | None = None,
    ) -> LoopState:
        """Advance until kappa_max steps are done or the pool is exhausted."""
        while state.kappa < self.ledger.kappa_max and self.unlabeled_ids(state):
            ids = self.select(state, strategy)
            state = self.queue_selection(state, ids)
            answers: dict[str, int] = {}
            for sid in ids:
                try:
                    answers[sid] = annotator(sid)
                except Exception as exc:
                    path = self._checkpoint(
                        state, checkpoint_dir, strategy, name="aborted"
                    )
                    raise AnnotatorFailure(
                        f"annotator failed on {sid!r}: {exc}", checkpoint=path
                    ) from exc
            state = self.submit_labels(state, answers)
            self._checkpoint(state, checkpoint_dir, strategy)
        return state

    def _checkpoint(
        self,
        state: LoopState,
        checkpoint_dir: str | Path | None,
        strategy: str,
        name: str | None = None,
    ) -> Path | None:
        if checkpoint_dir is None:
            return None
        directory = Path(checkpoint_dir)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{name or f'step_{state.kappa:03d}'}.json"
        save_checkpoint(state, self.run_seed, strategy, path)
        return path


def save_checkpoint(
    state: LoopState, run_seed: int, strategy: str, path: str | Path
) -> None:
    doc = {"run_seed": run_seed, "strategy": strategy, "state": state.to_dict()}
    Path(path).write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_checkpoint(path: str | Path) -> tuple[LoopState, int, str]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return LoopState.from_dict(doc["state"]), int(doc["run_seed"]), doc["strategy"]
