"""HTTP labeling service: exposes one annotation run to a human annotator.

The server owns a single session. It keeps the current selection queued,
accepts labels one at a time, and when the last queued sample is labeled it
atomically folds the answers into the run and queues the next selection.
Every mutation bumps a revision counter; responses carry the revision they
were computed at (``revision`` field and ``X-Revision`` header). Accepted
labels are checkpointed to disk before the response goes out, so a restart
from the checkpoint never loses an acknowledged label.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Callable

from fastapi import FastAPI, Header, HTTPException, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .classifier import predict
from .cluster import pca_project
from .loop import EigenLoop, LoopState, save_checkpoint
from .store import FeatureSet

SESSION_FILE = "session.json"


class StateResponse(BaseModel):
    kappa: int
    kappa_max: int
    spent: int
    cap: int
    pending_count: int
    revision: int
    num_classes: int


class QueueItem(BaseModel):
    sample_id: str
    asset_uri: str | None = None
    suggested_label: int | None = None


class LabelSubmission(BaseModel):
    sample_id: str
    label: int


class LabelResponse(BaseModel):
    accepted: bool
    remaining: int
    revision: int


class MetricsEntry(BaseModel):
    kappa: int
    bcubed_precision: float | None = None
    eval_top1: float | None = None
    eval_mean_class: float | None = None


class ProjectionPoint(BaseModel):
    id: str
    x: float
    y: float
    labeled: bool
    pending: bool
    label: int | None = None


class LabelingSession:
    """Serialized owner of one annotation run."""

    def __init__(
        self,
        loop: EigenLoop,
        state: LoopState,
        *,
        strategy: str = "eigen",
        assets: dict[str, str] | None = None,
        checkpoint_dir: str | Path | None = None,
        partial: dict[str, int] | None = None,
        revision: int = 0,
        on_terminal: Callable[[LoopState], None] | None = None,
    ):
        self.loop = loop
        self.state = state
        self.strategy = strategy
        self.assets = assets or {}
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.partial: dict[str, int] = dict(partial or {})
        self.revision = revision
        self.on_terminal = on_terminal
        self._lock = threading.Lock()
        self._projection = self._project(loop.features)
        with self._lock:
            self._ensure_queue()
            self._checkpoint()

    # -------------------------------------------------------------- helpers

    @staticmethod
    def _project(features: FeatureSet) -> dict[str, tuple[float, float]]:
        if features.d == 1:
            flat = pca_project(features, 1)
            coords = [(float(v[0]), 0.0) for v in flat.vectors]
        else:
            planar = pca_project(features, 2)
            coords = [(float(v[0]), float(v[1])) for v in planar.vectors]
        return dict(zip(features.ids, coords))

    def _ensure_queue(self) -> None:
        """Queue the next selection if nothing is pending and budget remains."""
        if self.state.pending:
            return
        if self.state.kappa >= self.loop.ledger.kappa_max:
            self._fire_terminal()
            return
        if not self.loop.unlabeled_ids(self.state):
            self._fire_terminal()
            return
        ids = self.loop.select(self.state, self.strategy)
        self.state = self.loop.queue_selection(self.state, ids)
        self.revision += 1

    def _fire_terminal(self) -> None:
        if self.on_terminal is not None:
            callback, self.on_terminal = self.on_terminal, None
            callback(self.state)

    def _checkpoint(self) -> None:
        if self.checkpoint_dir is None:
            return
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        doc = {
            "run_seed": self.loop.run_seed,
            "strategy": self.strategy,
            "revision": self.revision,
            "partial": self.partial,
            "state": self.state.to_dict(),
        }
        path = self.checkpoint_dir / SESSION_FILE
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def restore(
        cls,
        checkpoint_dir: str | Path,
        loop: EigenLoop,
        *,
        assets: dict[str, str] | None = None,
        on_terminal: Callable[[LoopState], None] | None = None,
    ) -> "LabelingSession":
        doc = json.loads(
            (Path(checkpoint_dir) / SESSION_FILE).read_text(encoding="utf-8")
        )
        return cls(
            loop,
            LoopState.from_dict(doc["state"]),
            strategy=doc["strategy"],
            assets=assets,
            checkpoint_dir=checkpoint_dir,
            partial={k: int(v) for k, v in doc["partial"].items()},
            revision=int(doc["revision"]),
            on_terminal=on_terminal,
        )

    # ------------------------------------------------------------ queries

    def remaining_queue(self) -> list[str]:
        return [sid for sid in self.state.pending if sid not in self.partial]

    def state_view(self) -> StateResponse:
        with self._lock:
            return StateResponse(
                kappa=self.state.kappa,
                kappa_max=self.loop.ledger.kappa_max,
                spent=self.state.spent,
                cap=self.loop.ledger.cap,
                pending_count=len(self.remaining_queue()),
                revision=self.revision,
                num_classes=self.loop.ledger.num_classes,
            )

    def queue_view(self) -> tuple[list[QueueItem], int]:
        with self._lock:
            items = []
            for sid in self.remaining_queue():
                suggestion = None
                if self.state.classifier is not None:
                    sample = self.loop.features.subset([sid])
                    suggestion = int(predict(self.state.classifier, sample)[0])
                items.append(
                    QueueItem(
                        sample_id=sid,
                        asset_uri=self.assets.get(sid),
                        suggested_label=suggestion,
                    )
                )
            return items, self.revision

    def metrics_view(self) -> tuple[list[MetricsEntry], int]:
        with self._lock:
            entries = [
                MetricsEntry(
                    kappa=rec.kappa,
                    bcubed_precision=rec.bcubed,
                    eval_top1=rec.eval_top1,
                    eval_mean_class=rec.eval_mean_class,
                )
                for rec in self.state.history
            ]
            return entries, self.revision

    def projection_view(self) -> tuple[list[ProjectionPoint], int]:
        with self._lock:
            labeled = self.state.labeled_ids()
            pending = set(self.remaining_queue())
            points = [
                ProjectionPoint(
                    id=sid,
                    x=xy[0],
                    y=xy[1],
                    labeled=sid in labeled,
                    pending=sid in pending,
                    label=self.state.labels[sid] if sid in labeled else None,
                )
                for sid, xy in self._projection.items()
            ]
            return points, self.revision

    # ----------------------------------------------------------- mutation

    def submit_label(
        self, sample_id: str, label: int, if_match: int | None = None
    ) -> LabelResponse:
        with self._lock:
            if if_match is not None and if_match != self.revision:
                raise HTTPException(
                    409,
                    f"stale revision {if_match}, server is at {self.revision}",
                )
            if sample_id in self.partial:
                raise HTTPException(409, f"{sample_id!r} already labeled this step")
            if sample_id not in self.state.pending:
                raise HTTPException(404, f"{sample_id!r} is not awaiting annotation")
            if not 0 <= label < self.loop.ledger.num_classes:
                raise HTTPException(
                    422,
                    f"label {label} outside [0, {self.loop.ledger.num_classes})",
                )

            self.partial[sample_id] = label
            self.revision += 1
            # remaining counts down within the step this label belongs to;
            # 0 tells the client the step is complete (the server has already
            # folded it in and queued the next selection)
            remaining = len(self.remaining_queue())
            if remaining == 0:
                self.state = self.loop.submit_labels(self.state, self.partial)
                self.partial = {}
                self.revision += 1
                self._step_checkpoint()
                self._ensure_queue()
            self._checkpoint()
            return LabelResponse(
                accepted=True, remaining=remaining, revision=self.revision
            )

    def _step_checkpoint(self) -> None:
        if self.checkpoint_dir is None:
            return
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(
            self.state,
            self.loop.run_seed,
            self.strategy,
            self.checkpoint_dir / f"step_{self.state.kappa:03d}.json",
        )

    @property
    def done(self) -> bool:
        with self._lock:
            return not self.state.pending and (
                self.state.kappa >= self.loop.ledger.kappa_max
                or not self.loop.unlabeled_ids(self.state)
            )


def create_app(session: LabelingSession, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="eigenshot labeling service")
    app.state.session = session

    @app.get("/api/state", response_model=StateResponse)
    def get_state(response: Response):
        view = session.state_view()
        response.headers["X-Revision"] = str(view.revision)
        return view

    @app.get("/api/queue", response_model=list[QueueItem])
    def get_queue(response: Response):
        items, revision = session.queue_view()
        response.headers["X-Revision"] = str(revision)
        return items

    @app.get("/api/metrics", response_model=list[MetricsEntry])
    def get_metrics(response: Response):
        entries, revision = session.metrics_view()
        response.headers["X-Revision"] = str(revision)
        return entries

    @app.get("/api/projection", response_model=list[ProjectionPoint])
    def get_projection(response: Response):
        points, revision = session.projection_view()
        response.headers["X-Revision"] = str(revision)
        return points

    @app.post("/api/labels", response_model=LabelResponse)
    def post_label(
        submission: LabelSubmission,
        response: Response,
        if_match: str | None = Header(default=None, alias="If-Match"),
    ):
        parsed = None
        if if_match is not None:
            try:
                parsed = int(if_match.strip('"'))
            except ValueError:
                raise HTTPException(400, f"If-Match must be a revision number")
        result = session.submit_label(submission.sample_id, submission.label, parsed)
        response.headers["X-Revision"] = str(result.revision)
        return result

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
