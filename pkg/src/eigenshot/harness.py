"""Seeded experiment harness: builds scenarios, runs annotation loops over
many seeds and strategies, and aggregates the results into reports.

A run report has the shape::

    {scenario, strategy, seeds: [...],
     per_seed: {"<seed>": {top1, mean_class, history: [{kappa, bcubed, top1}]}},
     aggregate: {mean: {top1, mean_class}, std: {top1, mean_class}}}

Aggregate std is the population standard deviation so single-seed runs stay
finite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cluster import bcubed_precision, kmeans, l2_normalize
from .contrastive import Encoder, MixedStream, MixerConfig, TrainConfig, train_encoder
from .loop import BudgetLedger, EigenLoop, LoopState, OracleAnnotator, STRATEGIES
from .store import FeatureSet, LabelSet, load_features, load_labels, load_manifest
from .synth import BlobPreset, generate_preset, scaled_preset


@dataclass
class ScenarioConfig:
    """What to run: data (preset or files), budget, head, feature space."""

    name: str = "blobs-standard"
    preset: str | BlobPreset | None = "blobs-standard"
    preset_overrides: dict = field(default_factory=dict)
    # file-based alternative to a preset
    target_manifest: str | None = None
    eval_manifest: str | None = None
    seed_labels_path: str | None = None
    num_classes: int = 10
    epsilon: int = 5
    per_step: int = 1
    allow_remainder: bool = False
    classifier_kind: str = "nearest-centroid"
    encoder_path: str | None = None
    normalize: bool = False
    t_max: int = 100

    def ledger(self) -> BudgetLedger:
        return BudgetLedger(
            num_classes=self.num_classes,
            epsilon=self.epsilon,
            per_step=self.per_step,
            allow_remainder=self.allow_remainder,
        )

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        scen = doc.get("scenario", {})
        ledger = doc.get("ledger", {})
        return cls(
            name=scen.get("name", scen.get("preset", "scenario")),
            preset=scen.get("preset"),
            preset_overrides=scen.get("preset_overrides", {}),
            target_manifest=scen.get("target_manifest"),
            eval_manifest=scen.get("eval_manifest"),
            seed_labels_path=scen.get("seed_labels"),
            num_classes=int(ledger["C"]),
            epsilon=int(ledger["epsilon"]),
            per_step=int(ledger["b"]),
            allow_remainder=bool(ledger.get("allow_remainder", False)),
            classifier_kind=doc.get("classifier", "nearest-centroid"),
            encoder_path=doc.get("encoder"),
            normalize=bool(doc.get("normalize", False)),
        )


@dataclass
class ScenarioInstance:
    loop: EigenLoop
    seeds: LabelSet
    truth: LabelSet


def _apply_space(fs: FeatureSet, encoder: Encoder | None, normalize: bool) -> FeatureSet:
    if encoder is not None:
        fs = encoder.encode_features(fs)
    if normalize:
        fs = l2_normalize(fs)
    return fs


def _pick_seed_labels(
    truth: LabelSet, rng: np.random.Generator, ids_in_order: list[str]
) -> LabelSet:
    by_class: dict[int, list[str]] = {}
    for sid in ids_in_order:
        if sid in truth:
            by_class.setdefault(truth[sid], []).append(sid)
    missing = [c for c in range(truth.num_classes) if c not in by_class]
    if missing:
        raise ValueError(f"ground truth has no samples for class(es) {missing}")
    picked = {}
    for cls in range(truth.num_classes):
        members = by_class[cls]
        picked[members[int(rng.integers(len(members)))]] = cls
    return LabelSet(picked, truth.num_classes)


def build_scenario(cfg: ScenarioConfig, seed: int) -> ScenarioInstance:
    """Materialize data + loop for one seeded trial.

    Preset scenarios regenerate data per seed; file-based scenarios have fixed
    data, so only loop randomness varies with the seed.
    """
    encoder = Encoder.load(cfg.encoder_path) if cfg.encoder_path else None

    if cfg.target_manifest:
        manifest = load_manifest(cfg.target_manifest)
        target = load_features(manifest.features)
        truth = (
            load_labels(manifest.labels, cfg.num_classes) if manifest.labels else None
        )
        eval_features = eval_labels = None
        if cfg.eval_manifest:
            eman = load_manifest(cfg.eval_manifest)
            eval_features = load_features(eman.features)
            if eman.labels is None:
                raise ValueError("eval manifest must include labels")
            eval_labels = load_labels(eman.labels, cfg.num_classes)
        if cfg.seed_labels_path:
            seeds = load_labels(cfg.seed_labels_path, cfg.num_classes)
        elif truth is not None:
            rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
            seeds = _pick_seed_labels(truth, rng, target.ids)
        else:
            raise ValueError("need seed_labels or target labels to start a run")
    else:
        preset = cfg.preset or "blobs-standard"
        if isinstance(preset, str) and cfg.preset_overrides:
            preset = scaled_preset(preset, **cfg.preset_overrides)
        data = generate_preset(preset, seed=seed)
        target, truth = data.target, data.target_labels
        eval_features, eval_labels = data.eval_set, data.eval_labels
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
        seeds = _pick_seed_labels(truth, rng, target.ids)

    working = _apply_space(target, encoder, cfg.normalize)
    eval_working = (
        _apply_space(eval_features, encoder, cfg.normalize)
        if eval_features is not None
        else None
    )
    loop = EigenLoop(
        working,
        cfg.ledger(),
        classifier_kind=cfg.classifier_kind,
        eval_features=eval_working,
        eval_labels=eval_labels,
        truth=truth,
        run_seed=seed,
        t_max=cfg.t_max,
    )
    return ScenarioInstance(loop=loop, seeds=seeds, truth=truth)


def _seed_outcome(state: LoopState) -> dict:
    history = [
        {"kappa": rec.kappa, "bcubed": rec.bcubed, "top1": rec.eval_top1}
        for rec in state.history
    ]
    last = state.history[-1] if state.history else None
    return {
        "top1": last.eval_top1 if last else None,
        "mean_class": last.eval_mean_class if last else None,
        "history": history,
    }


def single_seed_report(scenario: str, strategy: str, seed: int, state: LoopState) -> dict:
    """Run-report document for one terminal state (used by resume/service)."""
    outcome = _seed_outcome(state)
    per_seed = {str(seed): outcome}
    return {
        "scenario": scenario,
        "strategy": strategy,
        "seeds": [seed],
        "per_seed": per_seed,
        "aggregate": _aggregate(per_seed),
    }


def run_single(
    cfg: ScenarioConfig,
    strategy: str,
    seed: int,
    checkpoint_dir: str | Path | None = None,
) -> tuple[LoopState, dict]:
    instance = build_scenario(cfg, seed)
    annotator = OracleAnnotator(instance.truth)
    state = instance.loop.run_loop(
        instance.seeds, annotator, strategy, checkpoint_dir=checkpoint_dir
    )
    return state, _seed_outcome(state)


def _aggregate(per_seed: dict) -> dict:
    def stats(key: str) -> tuple[float | None, float | None]:
        values = [o[key] for o in per_seed.values() if o[key] is not None]
        if not values:
            return None, None
        arr = np.array(values, dtype=np.float64)
        return float(arr.mean()), float(arr.std())

    top1_mean, top1_std = stats("top1")
    mc_mean, mc_std = stats("mean_class")
    return {
        "mean": {"top1": top1_mean, "mean_class": mc_mean},
        "std": {"top1": top1_std, "mean_class": mc_std},
    }


def run_report(
    cfg: ScenarioConfig,
    strategy: str,
    seeds: list[int],
    checkpoint_root: str | Path | None = None,
) -> dict:
    """Run one strategy over several seeds and aggregate."""
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    per_seed = {}
    for seed in seeds:
        ckpt = (
            Path(checkpoint_root) / f"seed_{seed}" if checkpoint_root else None
        )
        _, outcome = run_single(cfg, strategy, seed, checkpoint_dir=ckpt)
        per_seed[str(seed)] = outcome
    return {
        "scenario": cfg.name,
        "strategy": strategy,
        "seeds": list(seeds),
        "per_seed": per_seed,
        "aggregate": _aggregate(per_seed),
    }


def run_comparison(
    cfg: ScenarioConfig, strategies: list[str], seeds: list[int]
) -> dict:
    """Per-strategy reports over the same seeds, plus an aligned text table."""
    runs = [run_report(cfg, strategy, seeds) for strategy in strategies]
    return {
        "scenario": cfg.name,
        "seeds": list(seeds),
        "runs": runs,
        "table": format_comparison_table(runs),
    }


def format_comparison_table(runs: list[dict]) -> str:
    header = f"{'strategy':<18} {'top1':>16} {'mean_class':>16}"
    lines = [header, "-" * len(header)]

    def cell(agg: dict, key: str) -> str:
        mean, std = agg["mean"][key], agg["std"][key]
        if mean is None:
            return "n/a"
        return f"{mean:.4f} ± {std:.4f}"

    for run in runs:
        agg = run["aggregate"]
        lines.append(
            f"{run['strategy']:<18} {cell(agg, 'top1'):>16} "
            f"{cell(agg, 'mean_class'):>16}"
        )
    return "\n".join(lines)


def merge_reports(reports: list[dict]) -> dict:
    """Combine saved run reports into one comparison document."""
    scenarios = {r.get("scenario") for r in reports}
    warnings = []
    if len(scenarios) > 1:
        warnings.append(f"reports span multiple scenarios: {sorted(map(str, scenarios))}")
    return {
        "scenario": sorted(map(str, scenarios))[0] if scenarios else None,
        "runs": reports,
        "table": format_comparison_table(reports),
        "warnings": warnings,
    }


# --------------------------------------------------------------------- gap

# standard ratio-ablation conditions for the mixed stream; "natural" means no
# re-balancing (the target keeps its own size relative to the source)
REBALANCE_CONDITIONS: dict[str, float | None] = {
    "no-rebalance": None,
    "p05": 0.05,
    "p20": 0.2,
    "p50": 0.5,
}


def natural_percentage(source: FeatureSet, targets: list[FeatureSet]) -> float:
    """The p at which the mixture reduces to uniform draws over the plain
    concatenation of source and targets."""
    total = sum(t.n for t in targets)
    if total == 0:
        raise ValueError("need at least one target sample")
    return min(1.0, total / source.n)


def rebalance_ratio(condition: str, source: FeatureSet, targets: list[FeatureSet]) -> float:
    try:
        value = REBALANCE_CONDITIONS[condition]
    except KeyError:
        raise ValueError(
            f"unknown condition {condition!r}, choose from {sorted(REBALANCE_CONDITIONS)}"
        ) from None
    return natural_percentage(source, targets) if value is None else value


TRANSDUCTIVE_HP = TrainConfig(
    steps=1200,
    batch_size=32,
    num_negatives=15,
    temperature=0.2,
    learning_rate=0.5,
    augment_sigma=0.5,
    hidden_dim=64,
    embed_dim=16,
)


def transductive_gap_trial(
    seed: int,
    preset: str | BlobPreset = "blobs-shifted",
    rebalance: float = 0.2,
    hp: TrainConfig | None = None,
    cluster_seed: int = 0,
) -> tuple[float, float]:
    """One seeded trial of mixed-stream vs source-only pretraining.

    Returns (bcubed with target data in the stream, bcubed without), where
    each score clusters the encoder's target embeddings into C groups and
    measures label purity against the generator's ground truth.
    """
    hp = hp or TRANSDUCTIVE_HP
    data = generate_preset(preset, seed=seed)
    c = data.target_labels.num_classes

    def bcubed_for(targets: list[FeatureSet]) -> float:
        stream = MixedStream(
            data.source, targets, MixerConfig(rebalance, seed=seed)
        )
        result = train_encoder(stream, TrainConfig(**{**hp.__dict__, "seed": seed}))
        embedded = result.encoder.encode_features(data.target)
        model = kmeans(embedded, c, init="kmeanspp", seed=cluster_seed)
        return bcubed_precision(model.assignment, data.target_labels).bcubed_precision

    return bcubed_for([data.target]), bcubed_for([])


def save_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
