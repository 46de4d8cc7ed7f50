"""Command-line entry point.

Subcommands: ``gen`` (synthetic datasets), ``pretrain`` (contrastive encoder),
``cluster`` (k-means / anchor-constrained), ``loop`` (budgeted annotation run,
oracle-driven or served over HTTP), ``report`` (aggregate run reports) and
``project`` (2-D projection export).

Conventions: logs are JSON lines on stderr; every output lands under
``--out-dir`` (default from ``EIGENSHOT_OUT_DIR``, else the current
directory); exit codes are 0 on success, 1 on runtime failure, 2 on usage
errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .cluster import (
    ackmeans,
    bcubed_precision,
    kmeans,
    l2_normalize,
    pca_project,
    save_cluster_model,
)
from .contrastive import MixedStream, MixerConfig, TrainConfig, train_encoder
from .harness import (
    ScenarioConfig,
    build_scenario,
    load_report,
    merge_reports,
    run_report,
    save_report,
    single_seed_report,
)
from .loop import OracleAnnotator, load_checkpoint
from .service import LabelingSession, create_app
from .store import (
    DatasetManifest,
    load_features,
    load_labels,
    save_features,
    save_labels,
    save_manifest,
)
from .synth import PRESETS, generate_preset, scaled_preset

logger = logging.getLogger("eigenshot")


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        doc = {"level": record.levelname.lower(), "event": record.getMessage()}
        extra = getattr(record, "data", None)
        if extra:
            doc.update(extra)
        return json.dumps(doc)


def log_event(event: str, level: int = logging.INFO, **fields) -> None:
    logger.log(level, event, extra={"data": fields})


def configure_logging(level_name: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    logger.handlers = [handler]
    logger.setLevel(getattr(logging, level_name.upper()))


# ------------------------------------------------------------------ parsing


def relative_path(value: str) -> str:
    if Path(value).is_absolute():
        raise argparse.ArgumentTypeError(
            f"output path {value!r} must be relative to --out-dir"
        )
    return value


def probability(value: str) -> float:
    try:
        p = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{value!r} is not a number") from None
    if not 0.0 < p <= 1.0:
        raise argparse.ArgumentTypeError(f"percentage must be in (0, 1], got {p}")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eigenshot",
        description="budget-aware annotation toolkit in feature space",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--seed", type=int, default=0, help="global RNG seed")
    parser.add_argument(
        "--log-level", default="info",
        choices=["debug", "info", "warning", "error"],
    )
    parser.add_argument(
        "--out-dir",
        default=os.environ.get("EIGENSHOT_OUT_DIR", "."),
        help="directory all outputs are written under "
             "(default: $EIGENSHOT_OUT_DIR or '.')",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write a synthetic source/target dataset")
    gen.add_argument("--preset", required=True, choices=sorted(PRESETS))
    gen.add_argument("--out", type=relative_path, default="data")
    gen.add_argument("--format", default="binary", choices=["csv", "binary"])
    gen.add_argument("--classes", type=int, default=None)
    gen.add_argument("--dim", type=int, default=None)
    gen.add_argument("--target-size", type=int, default=None)
    gen.add_argument("--source-size", type=int, default=None)
    gen.set_defaults(func=cmd_gen)

    pre = sub.add_parser("pretrain", help="train the contrastive encoder")
    pre.add_argument("--source", required=True)
    pre.add_argument("--target", action="append", default=None,
                     help="repeatable; omit for source-only (inductive) training")
    pre.add_argument("--p", type=probability, default=0.2,
                     help="re-balanced target share of the source size")
    pre.add_argument("--steps", type=int, default=1500)
    pre.add_argument("--batch-size", type=int, default=32)
    pre.add_argument("--k-negatives", type=int, default=15)
    pre.add_argument("--tau", type=float, default=0.2)
    pre.add_argument("--learning-rate", type=float, default=0.5)
    pre.add_argument("--augment-sigma", type=float, default=None,
                     help="view jitter std (default: 0.1 x mean source std)")
    pre.add_argument("--hidden-dim", type=int, default=64)
    pre.add_argument("--embed-dim", type=int, default=16)
    pre.add_argument("--out-encoder", type=relative_path, default="encoder.json")
    pre.set_defaults(func=cmd_pretrain)

    clu = sub.add_parser("cluster", help="cluster a feature file")
    clu.add_argument("--features", required=True)
    clu.add_argument("--anchors", default=None,
                     help="feature file whose rows are frozen anchor centers")
    clu.add_argument("--k", type=int, required=True,
                     help="number of (new) clusters")
    clu.add_argument("--labels", default=None)
    clu.add_argument("--num-classes", type=int, default=None)
    clu.add_argument("--init", default="random-pick",
                     choices=["random-pick", "kmeanspp"])
    clu.add_argument("--t-max", type=int, default=100)
    clu.add_argument("--normalize", action="store_true",
                     help="L2-normalize features before clustering")
    clu.add_argument("--out", type=relative_path, default="clusters.json")
    clu.set_defaults(func=cmd_cluster)

    loop = sub.add_parser("loop", help="run a budgeted annotation loop")
    loop.add_argument("--manifest", required=True, help="run manifest JSON")
    loop.add_argument("--strategy", default=None,
                      choices=["eigen", "random", "oracle-balanced"],
                      help="overrides the manifest's strategy")
    loop.add_argument("--annotator", default="oracle",
                      choices=["oracle", "service"])
    loop.add_argument("--resume", default=None,
                      help="checkpoint file to continue from")
    loop.add_argument("--port", type=int, default=8000)
    loop.add_argument("--ui-dir", default=None,
                      help="static UI bundle served at / in service mode")
    loop.add_argument("--out", type=relative_path, default="report.json")
    loop.set_defaults(func=cmd_loop)

    rep = sub.add_parser("report", help="aggregate saved run reports")
    rep.add_argument("--runs", nargs="+", required=True)
    rep.add_argument("--format", default="table", choices=["json", "table"])
    rep.add_argument("--out", type=relative_path, default=None)
    rep.set_defaults(func=cmd_report)

    proj = sub.add_parser("project", help="export a 2-D projection as CSV")
    proj.add_argument("--features", required=True)
    proj.add_argument("--dims", type=int, default=2)
    proj.add_argument("--out", type=relative_path, default="projection.csv")
    proj.set_defaults(func=cmd_project)

    return parser


def out_path(args, value: str) -> Path:
    path = Path(args.out_dir) / value
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# --------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    overrides = {}
    if args.classes is not None:
        overrides["num_classes"] = args.classes
    if args.dim is not None:
        overrides["dim"] = args.dim
    if args.target_size is not None:
        overrides["target_size"] = args.target_size
    if args.source_size is not None:
        overrides["source_size"] = args.source_size
    preset = scaled_preset(args.preset, **overrides)
    data = generate_preset(preset, seed=args.seed)

    ext = "csv" if args.format == "csv" else "eigf"
    base = out_path(args, args.out)
    base.mkdir(parents=True, exist_ok=True)

    paths = {
        "source": base / f"source.{ext}",
        "target": base / f"target.{ext}",
        "eval": base / f"eval.{ext}",
    }
    save_features(data.source, paths["source"], args.format)
    save_features(data.target, paths["target"], args.format)
    save_features(data.eval_set, paths["eval"], args.format)
    save_labels(data.target_labels, base / "target_labels.csv")
    save_labels(data.eval_labels, base / "eval_labels.csv")

    save_manifest(
        DatasetManifest(features=paths["source"], role="source"),
        base / "source_manifest.json",
    )
    save_manifest(
        DatasetManifest(
            features=paths["target"], role="target",
            labels=base / "target_labels.csv",
        ),
        base / "target_manifest.json",
    )
    save_manifest(
        DatasetManifest(
            features=paths["eval"], role="target",
            labels=base / "eval_labels.csv",
        ),
        base / "eval_manifest.json",
    )
    run_manifest = {
        "scenario": {
            "name": preset.name,
            "target_manifest": "target_manifest.json",
            "eval_manifest": "eval_manifest.json",
        },
        "ledger": {"C": preset.num_classes, "epsilon": 5, "b": 1},
        "strategy": "eigen",
        "seeds": [args.seed],
        "encoder": None,
        "classifier": "nearest-centroid",
    }
    (base / "run_manifest.json").write_text(
        json.dumps(run_manifest, indent=2) + "\n", encoding="utf-8"
    )
    log_event("gen.done", preset=preset.name, out=str(base),
              classes=preset.num_classes, target_size=preset.target_size)
    return 0


def cmd_pretrain(args) -> int:
    source = load_features(args.source)
    targets = [load_features(t) for t in (args.target or [])]
    mode = "transductive" if targets else "inductive"
    sigma = args.augment_sigma
    if sigma is None:
        sigma = 0.1 * float(source.vectors.std(axis=0).mean())
    hp = TrainConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        num_negatives=args.k_negatives,
        temperature=args.tau,
        learning_rate=args.learning_rate,
        augment_sigma=sigma,
        seed=args.seed,
        hidden_dim=args.hidden_dim,
        embed_dim=args.embed_dim,
    )
    stream = MixedStream(source, targets, MixerConfig(args.p, seed=args.seed))
    log_event("pretrain.start", mode=mode, steps=args.steps, p=args.p,
              augment_sigma=sigma, targets=len(targets))
    result = train_encoder(stream, hp)

    encoder_path = out_path(args, args.out_encoder)
    result.encoder.save(encoder_path)
    log_path = encoder_path.with_name(encoder_path.stem + ".log.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        for step, loss in enumerate(result.losses):
            fh.write(json.dumps({"step": step, "loss": loss}) + "\n")
    log_event("pretrain.done", encoder=str(encoder_path), log=str(log_path),
              final_loss=result.losses[-1])
    return 0


def cmd_cluster(args) -> int:
    fs = load_features(args.features)
    if args.normalize:
        fs = l2_normalize(fs)
    if args.anchors:
        anchor_fs = load_features(args.anchors)
        anchors = l2_normalize(anchor_fs).vectors if args.normalize else anchor_fs.vectors
        model = ackmeans(fs, anchors, args.k, t_max=args.t_max,
                         seed=args.seed, init=args.init)
    else:
        model = kmeans(fs, args.k, init=args.init, t_max=args.t_max,
                       seed=args.seed)

    extra = {}
    if args.labels:
        if args.num_classes is None:
            raise ValueError("--labels requires --num-classes")
        labels = load_labels(args.labels, args.num_classes)
        quality = bcubed_precision(model.assignment, labels)
        extra["bcubed_precision"] = quality.bcubed_precision
        log_event("cluster.quality", bcubed=quality.bcubed_precision)

    path = out_path(args, args.out)
    save_cluster_model(model, path, **extra)
    log_event("cluster.done", out=str(path), m=model.num_anchors,
              K=model.num_free, iterations=model.iterations_run)
    return 0


def cmd_project(args) -> int:
    fs = load_features(args.features)
    projected = pca_project(fs, args.dims)
    path = out_path(args, args.out)
    save_features(projected, path, "csv")
    log_event("project.done", out=str(path), dims=args.dims, n=projected.n)
    return 0


def _serve(app, port: int, stop_event=None) -> None:  # separated for testability
    import threading

    import uvicorn

    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning")
    server = uvicorn.Server(config)
    if stop_event is not None:
        def watch():
            stop_event.wait()
            server.should_exit = True

        threading.Thread(target=watch, daemon=True).start()
    server.run()


def cmd_loop(args) -> int:
    manifest_doc = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    cfg = ScenarioConfig.from_dict(manifest_doc)
    _resolve_manifest_paths(cfg, Path(args.manifest).parent)
    strategy = args.strategy or manifest_doc.get("strategy", "eigen")
    seeds = [int(s) for s in manifest_doc.get("seeds", [args.seed])]

    if args.annotator == "service":
        return _loop_service(args, cfg, strategy, seeds)

    if args.resume:
        state, run_seed, ckpt_strategy = load_checkpoint(args.resume)
        strategy = args.strategy or ckpt_strategy
        instance = build_scenario(cfg, run_seed)
        ckpt_dir = out_path(args, "checkpoints") / f"seed_{run_seed}"
        terminal = instance.loop.run_from(
            state, OracleAnnotator(instance.truth), strategy,
            checkpoint_dir=ckpt_dir,
        )
        report = single_seed_report(cfg.name, strategy, run_seed, terminal)
    else:
        report = run_report(
            cfg, strategy, seeds, checkpoint_root=out_path(args, "checkpoints")
        )

    path = out_path(args, args.out)
    save_report(report, path)
    log_event("loop.done", strategy=strategy, out=str(path),
              mean_top1=report["aggregate"]["mean"]["top1"])
    return 0


def _resolve_manifest_paths(cfg: ScenarioConfig, base: Path) -> None:
    for attr in ("target_manifest", "eval_manifest", "seed_labels_path",
                 "encoder_path"):
        value = getattr(cfg, attr)
        if value and not Path(value).is_absolute():
            setattr(cfg, attr, str(base / value))


def _loop_service(args, cfg: ScenarioConfig, strategy: str, seeds) -> int:
    import threading

    seed = seeds[0]
    instance = build_scenario(cfg, seed)
    ckpt_dir = out_path(args, "checkpoints") / f"seed_{seed}"
    report_path = out_path(args, args.out)
    budget_spent = threading.Event()

    def on_terminal(state):
        report = single_seed_report(cfg.name, strategy, seed, state)
        save_report(report, report_path)
        log_event("loop.terminal", out=str(report_path))
        budget_spent.set()

    session = LabelingSession(
        instance.loop,
        instance.loop.init_loop(instance.seeds),
        strategy=strategy,
        checkpoint_dir=ckpt_dir,
        on_terminal=on_terminal,
    )
    app = create_app(session, static_dir=args.ui_dir)
    log_event("loop.serving", port=args.port, strategy=strategy,
              checkpoint_dir=str(ckpt_dir))
    _serve(app, args.port, stop_event=budget_spent)
    return 0


def cmd_report(args) -> int:
    reports = [load_report(p) for p in args.runs]
    merged = merge_reports(reports)
    for warning in merged["warnings"]:
        log_event("report.warning", logging.WARNING, detail=warning)

    if args.format == "json":
        path = out_path(args, args.out or "comparison.json")
        save_report(merged, path)
    else:
        path = out_path(args, args.out or "comparison.txt")
        path.write_text(merged["table"] + "\n", encoding="utf-8")
        print(merged["table"])
    log_event("report.done", out=str(path), runs=len(reports))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single CLI failure funnel
        log_event("error", logging.ERROR, type=type(exc).__name__, detail=str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
