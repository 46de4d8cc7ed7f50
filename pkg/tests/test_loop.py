from __future__ import annotations

import numpy as np
import pytest

from eigenshot.classifier import predict
from eigenshot.loop import (
    AnnotatorFailure,
    BudgetLedger,
    EigenLoop,
    OracleAnnotator,
    load_checkpoint,
    save_checkpoint,
    step_seed,
)
from eigenshot.store import FeatureSet, LabelSet


def blob_world(rng, classes=4, per_class=12, d=3, gap=9.0):
    """Well-separated blobs, one per class, plus ground truth."""
    rows, labels, ids = [], {}, []
    centers = rng.normal(size=(classes, d)) * gap
    for c in range(classes):
        pts = centers[c] + rng.normal(size=(per_class, d))
        for i, p in enumerate(pts):
            sid = f"c{c}_{i:02d}"
            ids.append(sid)
            labels[sid] = c
            rows.append(p)
    fs = FeatureSet(ids, np.array(rows))
    return fs, LabelSet(labels, classes), centers


def seeds_for(truth: LabelSet) -> LabelSet:
    picked: dict[str, int] = {}
    for sid, lab in sorted(truth.labels.items()):
        if lab not in picked.values():
            picked[sid] = lab
    return LabelSet(picked, truth.num_classes)


def make_loop(rng, classes=4, per_class=12, epsilon=2, b=1, **kwargs):
    fs, truth, _ = blob_world(rng, classes=classes, per_class=per_class)
    ledger = BudgetLedger(num_classes=classes, epsilon=epsilon, per_step=b,
                          allow_remainder=kwargs.pop("allow_remainder", False))
    loop = EigenLoop(fs, ledger, truth=truth, run_seed=0, **kwargs)
    return loop, seeds_for(truth), truth


class TestBudgetLedger:
    def test_arithmetic(self):
        ledger = BudgetLedger(num_classes=10, epsilon=5, per_step=1)
        assert ledger.step_quota == 10
        assert ledger.kappa_max == 5
        assert ledger.cap == 60
        assert [ledger.quota_for_step(k) for k in range(5)] == [10] * 5

    def test_non_divisible_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            BudgetLedger(num_classes=4, epsilon=5, per_step=2)

    def test_remainder_policy(self):
        ledger = BudgetLedger(num_classes=4, epsilon=5, per_step=2,
                              allow_remainder=True)
        assert ledger.kappa_max == 3
        assert [ledger.quota_for_step(k) for k in range(3)] == [8, 8, 4]
        assert sum(ledger.quota_for_step(k) for k in range(3)) == 5 * 4

    def test_single_step_budget(self):
        ledger = BudgetLedger(num_classes=3, epsilon=4, per_step=4)
        assert ledger.kappa_max == 1
        assert ledger.quota_for_step(0) == 12

    def test_validation(self):
        with pytest.raises(ValueError):
            BudgetLedger(num_classes=1, epsilon=1, per_step=1)
        with pytest.raises(ValueError):
            BudgetLedger(num_classes=2, epsilon=0, per_step=1)
        with pytest.raises(ValueError):
            BudgetLedger(num_classes=2, epsilon=2, per_step=0)

    def test_round_trip(self):
        ledger = BudgetLedger(num_classes=5, epsilon=3, per_step=3)
        assert BudgetLedger.from_dict(ledger.to_dict()) == ledger


class TestInitLoop:
    def test_seeds_become_anchors(self, rng):
        loop, seeds, _ = make_loop(rng)
        state = loop.init_loop(seeds)
        assert state.kappa == 0
        assert state.spent == 4
        assert sorted(state.anchor_ids) == sorted(seeds.labels)
        assert state.pending == [] and state.history == []

    def test_classifier_predicts_seed_classes(self, rng):
        loop, seeds, _ = make_loop(rng)
        state = loop.init_loop(seeds)
        seed_fs = loop.features.subset(list(seeds.labels))
        pred = predict(state.classifier, seed_fs)
        assert pred.tolist() == [seeds[sid] for sid in seeds.labels]

    def test_duplicate_class_seed_rejected(self, rng):
        loop, _, truth = make_loop(rng)
        ids = sorted(truth.labels)
        twice = LabelSet({ids[0]: 0, ids[1]: 0, ids[-1]: 3, ids[-2]: 2}, 4)
        with pytest.raises(ValueError, match="more than one seed"):
            loop.init_loop(twice)

    def test_missing_class_seed_rejected(self, rng):
        loop, seeds, _ = make_loop(rng)
        partial = {sid: lab for sid, lab in seeds.labels.items() if lab != 2}
        # LabelSet itself is fine; init must notice the class gap
        with pytest.raises(ValueError, match="no seed"):
            loop.init_loop(LabelSet(partial, 4))

    def test_unknown_seed_id_rejected(self, rng):
        loop, seeds, _ = make_loop(rng)
        labels = dict(seeds.labels)
        first = next(iter(labels))
        labels["ghost"] = labels.pop(first)
        with pytest.raises(ValueError, match="not in the target"):
            loop.init_loop(LabelSet(labels, 4))


class TestSelection:
    def test_eigen_finds_new_blobs(self, rng):
        # anchors cover blobs 0/1; new clusters must land in blobs 2/3
        fs, truth, _ = blob_world(rng, classes=4, per_class=10)
        ledger = BudgetLedger(num_classes=2, epsilon=1, per_step=1)
        covered = {sid: lab for sid, lab in sorted(truth.labels.items()) if lab < 2}
        seeds = seeds_for(LabelSet(covered, 2))
        loop = EigenLoop(fs, ledger, run_seed=0)
        state = loop.init_loop(seeds)
        chosen = loop.select_eigen_samples(state)
        assert len(chosen) == 2
        picked_classes = {truth[sid] for sid in chosen}
        assert picked_classes == {2, 3}

    def test_selection_deterministic(self, rng):
        loop, seeds, _ = make_loop(rng)
        state = loop.init_loop(seeds)
        assert loop.select_eigen_samples(state) == loop.select_eigen_samples(state)

    def test_quota_clamps_to_pool(self, rng):
        loop, seeds, _ = make_loop(rng, classes=2, per_class=3, epsilon=4, b=4)
        state = loop.init_loop(seeds)
        # pool is 4 unlabeled, quota is 8 -> all 4 selected, each its own cluster
        chosen = loop.select_eigen_samples(state)
        assert sorted(chosen) == sorted(loop.unlabeled_ids(state))

    def test_select_refused_after_budget(self, rng):
        loop, seeds, truth = make_loop(rng, epsilon=1, b=1)
        state = loop.run_loop(seeds, OracleAnnotator(truth))
        with pytest.raises(ValueError, match="budget exhausted"):
            loop.select_eigen_samples(state)

    def test_random_ignores_labels_and_covers_pool(self, rng):
        loop, seeds, _ = make_loop(rng)
        state = loop.init_loop(seeds)
        chosen = loop.select_random(state)
        assert len(chosen) == len(set(chosen)) == 4
        assert set(chosen) <= set(loop.unlabeled_ids(state))

    def test_oracle_balanced_picks_per_class(self, rng):
        loop, seeds, truth = make_loop(rng, b=2, epsilon=2)
        state = loop.init_loop(seeds)
        chosen = loop.select_oracle_balanced(state)
        counts = {}
        for sid in chosen:
            counts[truth[sid]] = counts.get(truth[sid], 0) + 1
        assert counts == {0: 2, 1: 2, 2: 2, 3: 2}

    def test_oracle_balanced_needs_truth(self, rng):
        fs, truth, _ = blob_world(rng)
        ledger = BudgetLedger(num_classes=4, epsilon=1, per_step=1)
        loop = EigenLoop(fs, ledger, run_seed=0)  # no truth
        state = loop.init_loop(seeds_for(truth))
        with pytest.raises(ValueError, match="ground-truth"):
            loop.select_oracle_balanced(state)


class TestSubmit:
    def test_full_budget_walkthrough(self, rng):
        loop, seeds, truth = make_loop(rng, classes=4, per_class=12,
                                       epsilon=5, b=1)
        state = loop.init_loop(seeds)
        for expected_kappa in range(1, 6):
            ids = loop.select_eigen_samples(state)
            assert len(ids) == 4
            state = loop.queue_selection(state, ids)
            state = loop.submit_labels(state, {sid: truth[sid] for sid in ids})
            assert state.kappa == expected_kappa
            assert state.spent == 4 + 4 * expected_kappa
        assert state.spent == 24  # C + epsilon*C
        with pytest.raises(ValueError, match="budget exhausted"):
            loop.select_eigen_samples(state)

    def test_partial_answers_leave_state_unchanged(self, rng):
        loop, seeds, truth = make_loop(rng)
        state = loop.init_loop(seeds)
        ids = loop.select_eigen_samples(state)
        queued = loop.queue_selection(state, ids)
        answers = {sid: truth[sid] for sid in ids[:-1]}
        with pytest.raises(ValueError, match="cover exactly"):
            loop.submit_labels(queued, answers)
        assert queued.pending == ids
        assert queued.kappa == 0 and queued.spent == 4

    def test_out_of_range_label_rejected(self, rng):
        loop, seeds, truth = make_loop(rng)
        state = loop.init_loop(seeds)
        ids = loop.select_eigen_samples(state)
        state = loop.queue_selection(state, ids)
        bad = {sid: 99 for sid in ids}
        with pytest.raises(ValueError, match="outside"):
            loop.submit_labels(state, bad)

    def test_requeue_of_labeled_id_rejected(self, rng):
        loop, seeds, _ = make_loop(rng)
        state = loop.init_loop(seeds)
        anchor = state.anchor_ids[0]
        with pytest.raises(ValueError, match="queueable"):
            loop.queue_selection(state, [anchor])

    def test_history_records_metrics(self, rng):
        fs, truth, _ = blob_world(rng)
        ledger = BudgetLedger(num_classes=4, epsilon=2, per_step=1)
        loop = EigenLoop(fs, ledger, truth=truth, run_seed=0,
                         eval_features=fs, eval_labels=truth)
        state = loop.run_loop(seeds_for(truth), OracleAnnotator(truth))
        assert len(state.history) == 2
        for kappa, rec in enumerate(state.history, start=1):
            assert rec.kappa == kappa
            assert 0.0 <= rec.bcubed <= 1.0
            assert 0.0 <= rec.eval_top1 <= 1.0
            assert len(rec.selected) == 4


class TestRunLoop:
    def test_oracle_balanced_ends_class_balanced(self, rng):
        loop, seeds, truth = make_loop(rng, epsilon=3, b=1, per_class=10)
        state = loop.run_loop(seeds, OracleAnnotator(truth),
                              strategy="oracle-balanced")
        counts: dict[int, int] = {}
        for sid in state.anchor_ids:
            counts[truth[sid]] = counts.get(truth[sid], 0) + 1
        assert counts == {c: 4 for c in range(4)}  # 1 seed + epsilon each

    def test_random_gives_no_balance_guarantee(self, rng):
        # pool heavily skewed toward class 0
        rows, labels, ids = [], {}, []
        for i in range(40):
            ids.append(f"z{i:02d}")
            labels[f"z{i:02d}"] = 0
            rows.append([float(i), 0.0])
        for i in range(3):
            ids.append(f"o{i}")
            labels[f"o{i}"] = 1
            rows.append([100.0 + i, 50.0])
        fs = FeatureSet(ids, np.array(rows))
        truth = LabelSet(labels, 2)
        ledger = BudgetLedger(num_classes=2, epsilon=4, per_step=2)
        loop = EigenLoop(fs, ledger, truth=truth, run_seed=1)
        seeds = LabelSet({"z00": 0, "o0": 1}, 2)
        state = loop.run_loop(seeds, OracleAnnotator(truth), strategy="random")
        counts = {0: 0, 1: 0}
        for sid in state.anchor_ids:
            counts[truth[sid]] += 1
        assert counts[0] != counts[1]

    def test_no_id_annotated_twice(self, rng):
        loop, seeds, truth = make_loop(rng, epsilon=4, b=2)
        state = loop.run_loop(seeds, OracleAnnotator(truth))
        assert len(state.anchor_ids) == len(set(state.anchor_ids))
        selected = [sid for rec in state.history for sid in rec.selected]
        assert len(selected) == len(set(selected))
        assert not set(selected) & set(seeds.labels)

    def test_anchor_growth_per_step(self, rng):
        loop, seeds, truth = make_loop(rng, epsilon=3, b=1)
        state = loop.init_loop(seeds)
        sizes = [state.spent]
        annotator = OracleAnnotator(truth)
        while state.kappa < loop.ledger.kappa_max:
            ids = loop.select(state, "eigen")
            state = loop.queue_selection(state, ids)
            state = loop.submit_labels(state, {s: annotator(s) for s in ids})
            sizes.append(state.spent)
        assert sizes == [4, 8, 12, 16]

    def test_pool_exhaustion_stops_early(self, rng):
        # cap 2+8*2=18 exceeds the 6-sample pool; loop must stop gracefully
        loop, seeds, truth = make_loop(rng, classes=2, per_class=3,
                                       epsilon=8, b=2)
        state = loop.run_loop(seeds, OracleAnnotator(truth))
        assert state.spent == 6  # whole pool
        assert not loop.unlabeled_ids(state)
        assert state.kappa <= loop.ledger.kappa_max

    def test_annotator_failure_checkpoints(self, rng, tmp_path):
        loop, seeds, truth = make_loop(rng)

        class Flaky:
            def __init__(self):
                self.calls = 0

            def __call__(self, sample_id, asset_uri=None):
                self.calls += 1
                if self.calls > 2:
                    raise RuntimeError("annotator went away")
                return truth[sample_id]

        with pytest.raises(AnnotatorFailure) as err:
            loop.run_loop(seeds, Flaky(), checkpoint_dir=tmp_path)
        assert err.value.checkpoint is not None
        state, run_seed, strategy = load_checkpoint(err.value.checkpoint)
        assert run_seed == 0 and strategy == "eigen"
        assert state.pending  # the queued step was preserved

    def test_unknown_strategy(self, rng):
        loop, seeds, _ = make_loop(rng)
        state = loop.init_loop(seeds)
        with pytest.raises(ValueError, match="strategy"):
            loop.select(state, "uncertainty")


class TestCheckpointResume:
    def test_state_round_trip(self, rng, tmp_path):
        loop, seeds, truth = make_loop(rng, epsilon=2)
        state = loop.run_loop(seeds, OracleAnnotator(truth),
                              checkpoint_dir=tmp_path)
        path = tmp_path / "manual.json"
        save_checkpoint(state, loop.run_seed, "eigen", path)
        back, run_seed, strategy = load_checkpoint(path)
        assert back.to_dict() == state.to_dict()
        assert run_seed == 0 and strategy == "eigen"

    def test_resume_matches_uninterrupted(self, rng, tmp_path):
        loop, seeds, truth = make_loop(rng, epsilon=4, b=1)
        annotator = OracleAnnotator(truth)
        full = loop.run_loop(seeds, annotator, checkpoint_dir=tmp_path / "full")

        mid, _, _ = load_checkpoint(tmp_path / "full" / "step_002.json")
        resumed = loop.run_from(mid, annotator, "eigen",
                                checkpoint_dir=tmp_path / "resumed")
        assert resumed.to_dict() == full.to_dict()

    def test_step_seed_stable(self):
        assert step_seed(42, 3) == step_seed(42, 3)
        assert step_seed(42, 3) != step_seed(42, 4)
        assert step_seed(42, 3) != step_seed(43, 3)


class TestDirectionalAccuracy:
    def test_eval_accuracy_mostly_non_decreasing(self):
        # oracle-labeled runs on separable blobs: accuracy curves should rise
        wins = 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            fs, truth, _ = blob_world(rng, classes=3, per_class=10, gap=4.0)
            ledger = BudgetLedger(num_classes=3, epsilon=3, per_step=1)
            loop = EigenLoop(fs, ledger, truth=truth, run_seed=seed,
                             eval_features=fs, eval_labels=truth)
            state = loop.run_loop(seeds_for(truth), OracleAnnotator(truth))
            accs = [rec.eval_top1 for rec in state.history]
            if all(b >= a - 1e-12 for a, b in zip(accs, accs[1:])):
                wins += 1
        assert wins >= 8
