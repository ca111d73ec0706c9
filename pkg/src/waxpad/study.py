"""Human-baseline detection study as an HTTP service.

Volunteers see one face at a time in a seeded random order and answer
real/wax. State is event-sourced: every session creation and decision is
appended to a JSONL log which is replayed at startup, so a restart
reconstructs identical sessions and byte-identical reports. Ground-truth
labels never leave the server before a session is complete.
"""

from __future__ import annotations

import datetime as _dt
import json
import secrets
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import pydantic as _pydantic

from .dataset import DatasetManifest, Label, Protocol, Split, load_manifest, protocol_view
from .metrics import ConfusionCounts, PadReport, pad_rates, percent


class StudyError(Exception):
    pass


class UnknownSessionError(StudyError):
    pass


class DecisionRejected(StudyError):
    """Duplicate or out-of-order decision; state is unchanged."""


VERDICTS = ("real", "wax")
_VERDICT_TO_LABEL = {"real": Label.BONA_FIDE, "wax": Label.ATTACK}


@dataclass
class StudyConfig:
    manifest_path: Path
    event_log: Path
    protocol: Protocol = Protocol.III
    split: Split = Split.TEST
    subset_size: int | None = 20  # None = the whole split
    subset_seed: int = 0
    face_ids: tuple[str, ...] | None = None  # explicit subset overrides selection
    static_dir: Path | None = None  # built UI bundle served at /


@dataclass
class Session:
    session_id: str
    volunteer: str
    seed: int
    queue: list[str]
    created_at: str
    cursor: int = 0
    verdicts: dict[str, str] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return self.cursor >= len(self.queue)

    def served(self, face_id: str) -> bool:
        return face_id in self.queue[: min(self.cursor + 1, len(self.queue))]


def _utcnow() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="milliseconds")


class StudyService:
    """Session state machine over a configured face subset.

    All mutations are serialized through one lock and appended to the event
    log before they become visible, so concurrent handlers see consistent
    snapshots and a crash can lose at most an unacknowledged event.
    """

    def __init__(self, config: StudyConfig, manifest: DatasetManifest | None = None):
        self.config = config
        self.manifest = manifest or load_manifest(config.manifest_path)
        records = {r.face_id: r for r in self.manifest.records}
        self.subset = self._select_subset()
        missing = [fid for fid in self.subset if fid not in records]
        if missing:
            raise StudyError(f"configured subset contains unknown face ids: {missing[:3]}")
        self.truths = {fid: records[fid].label for fid in self.subset}
        self.records = records
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self._log_path = Path(config.event_log)
        self._log_path.parent.mkdir(parents=True, exist_ok=True)
        self._replay()

    def _select_subset(self) -> list[str]:
        if self.config.face_ids is not None:
            subset = list(self.config.face_ids)
        else:
            view = protocol_view(self.manifest, self.config.protocol, self.config.split)
            subset = [r.face_id for r in view]
            if self.config.subset_size is not None and self.config.subset_size < len(subset):
                rng = np.random.default_rng(self.config.subset_seed)
                chosen = rng.choice(len(subset), size=self.config.subset_size, replace=False)
                subset = [subset[i] for i in sorted(chosen)]
        if not subset:
            raise StudyError("study subset is empty; nothing to show volunteers")
        return subset

    # --- event sourcing ---------------------------------------------------

    def _replay(self) -> None:
        if not self._log_path.exists():
            return
        with self._log_path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    event = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise StudyError(f"corrupt event log line {line_no}: {exc.msg}") from exc
                self._apply(event, replaying=True)

    def _append(self, event: dict) -> None:
        with self._log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.flush()

    def _apply(self, event: dict, replaying: bool = False) -> None:
        kind = event["type"]
        if kind == "session_created":
            session = Session(
                session_id=event["session_id"],
                volunteer=event["volunteer"],
                seed=event["seed"],
                queue=list(event["queue"]),
                created_at=event["created_at"],
            )
            self.sessions[session.session_id] = session
        elif kind == "decision":
            session = self.sessions[event["session_id"]]
            session.verdicts[event["face_id"]] = event["verdict"]
            session.cursor += 1
        else:
            raise StudyError(f"unknown event type {kind!r}")

    # --- operations --------------------------------------------------------

    def create_session(self, volunteer: str, seed: int | None = None) -> Session:
        with self._lock:
            if seed is None:
                seed = secrets.randbits(32)
            rng = np.random.default_rng(seed)
            queue = [self.subset[i] for i in rng.permutation(len(self.subset))]
            event = {
                "type": "session_created",
                "session_id": secrets.token_urlsafe(16),
                "volunteer": volunteer,
                "seed": int(seed),
                "queue": queue,
                "created_at": _utcnow(),
            }
            self._append(event)
            self._apply(event)
            return self.sessions[event["session_id"]]

    def _session(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise UnknownSessionError(f"unknown session {session_id!r}")
        return session

    def next_item(self, session_id: str) -> dict:
        """Current queue item without advancing; idempotent until a decision lands."""
        with self._lock:
            session = self._session(session_id)
            if session.complete:
                return {"done": True, "total": len(session.queue)}
            face_id = session.queue[session.cursor]
            return {
                "done": False,
                "face_id": face_id,
                "image_url": f"/images/{face_id}?session_id={session_id}",
                "index": session.cursor,
                "total": len(session.queue),
            }

    def record_decision(
        self, session_id: str, face_id: str, verdict: str, elapsed_ms: int
    ) -> dict:
        if verdict not in VERDICTS:
            raise StudyError(f"verdict must be one of {VERDICTS}, got {verdict!r}")
        with self._lock:
            session = self._session(session_id)
            if session.complete:
                raise DecisionRejected("session already complete")
            if face_id in session.verdicts:
                raise DecisionRejected(f"duplicate decision for face {face_id!r}")
            current = session.queue[session.cursor]
            if face_id != current:
                raise DecisionRejected(
                    f"out of order: expected a decision for the current item, not {face_id!r}"
                )
            event = {
                "type": "decision",
                "session_id": session_id,
                "face_id": face_id,
                "verdict": verdict,
                "elapsed_ms": int(elapsed_ms),
                "received_at": _utcnow(),
            }
            decided_index = session.cursor
            self._append(event)
            self._apply(event)
            return {"accepted": True, "index": decided_index, "total": len(session.queue)}

    def image_path(self, session_id: str, face_id: str) -> Path:
        """Image bytes are only handed to sessions the face was already served to."""
        with self._lock:
            session = self._session(session_id)
            if not session.served(face_id):
                raise StudyError(f"face {face_id!r} has not been served to this session")
            return self.manifest.image_path_for(self.records[face_id])

    def _session_pad(self, session: Session) -> PadReport:
        decided = [
            (_VERDICT_TO_LABEL[verdict] == Label.BONA_FIDE, self.truths[fid])
            for fid, verdict in session.verdicts.items()
        ]
        # Verdict "real" on a wax face is an attack error (wax taken for real);
        # verdict "wax" on a real face is a bona fide error.
        attack_total = sum(1 for _, truth in decided if truth is Label.ATTACK)
        attack_errors = sum(
            1 for said_real, truth in decided if truth is Label.ATTACK and said_real
        )
        bona_total = len(decided) - attack_total
        bona_errors = sum(
            1 for said_real, truth in decided if truth is Label.BONA_FIDE and not said_real
        )
        counts = ConfusionCounts(attack_total, attack_errors, bona_total, bona_errors)
        return pad_rates(counts, strategy="human", config={"volunteer": session.volunteer})

    def session_report(self, session_id: str) -> dict:
        with self._lock:
            session = self._session(session_id)
            if not session.complete:
                raise StudyError(
                    f"session has answered {session.cursor} of {len(session.queue)} items"
                )
            pad = self._session_pad(session)
            return {
                "session_id": session.session_id,
                "volunteer": session.volunteer,
                "created_at": session.created_at,
                "total": len(session.queue),
                **pad.to_json_dict(),
            }

    def aggregate_report(self) -> dict:
        """Mean of per-session rates over complete sessions only."""
        with self._lock:
            complete = [s for s in self.sessions.values() if s.complete]
            if not complete:
                raise StudyError("no complete sessions to aggregate")
            complete.sort(key=lambda s: s.created_at)
            pads = [self._session_pad(s) for s in complete]
            n = len(pads)
            apcer = sum((p.apcer for p in pads), Fraction(0)) / n
            bpcer = sum((p.bpcer for p in pads), Fraction(0)) / n
            acer = sum((p.acer for p in pads), Fraction(0)) / n
            return {
                "sessions": n,
                "apcer": float(apcer),
                "bpcer": float(bpcer),
                "acer": float(acer),
                "apcer_pct": percent(apcer),
                "bpcer_pct": percent(bpcer),
                "acer_pct": percent(acer),
                "per_session": [
                    {
                        "session_id": s.session_id,
                        "volunteer": s.volunteer,
                        "apcer_pct": percent(p.apcer),
                        "bpcer_pct": percent(p.bpcer),
                        "acer_pct": percent(p.acer),
                    }
                    for s, p in zip(complete, pads)
                ],
            }


# Request bodies live at module level: postponed annotation evaluation cannot
# resolve closure-local pydantic models when the app factory builds routes.
class CreateSessionBody(_pydantic.BaseModel):
    volunteer: str
    seed: int | None = None


class DecisionBody(_pydantic.BaseModel):
    face_id: str
    verdict: str
    elapsed_ms: int = 0


def create_app(service: StudyService):
    """FastAPI application exposing the study API plus static UI hosting."""
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import FileResponse, JSONResponse
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="waxpad human study")
    app.state.service = service

    @app.post("/api/sessions")
    def create_session(body: CreateSessionBody):
        session = service.create_session(body.volunteer, body.seed)
        return {
            "session_id": session.session_id,
            "volunteer": session.volunteer,
            "total": len(session.queue),
            "created_at": session.created_at,
        }

    @app.get("/api/sessions/{session_id}/next")
    def next_item(session_id: str):
        try:
            return service.next_item(session_id)
        except UnknownSessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.post("/api/sessions/{session_id}/decisions")
    def record_decision(session_id: str, body: DecisionBody):
        try:
            return service.record_decision(
                session_id, body.face_id, body.verdict, body.elapsed_ms
            )
        except UnknownSessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except DecisionRejected as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except StudyError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/api/sessions/{session_id}/report")
    def session_report(session_id: str):
        try:
            # Canonical bytes: replaying the event log reproduces them exactly.
            doc = service.session_report(session_id)
        except UnknownSessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except StudyError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return JSONResponse(content=json.loads(json.dumps(doc, sort_keys=True)))

    @app.get("/api/report/aggregate")
    def aggregate_report():
        try:
            return JSONResponse(
                content=json.loads(json.dumps(service.aggregate_report(), sort_keys=True))
            )
        except StudyError as exc:
            raise HTTPException(status_code=409, detail=str(exc))

    @app.get("/images/{face_id}")
    def image(face_id: str, session_id: str = ""):
        try:
            path = service.image_path(session_id, face_id)
        except UnknownSessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except StudyError as exc:
            raise HTTPException(status_code=403, detail=str(exc))
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"image for {face_id!r} not found")
        media = "image/png" if path.suffix.lower() == ".png" else "image/jpeg"
        return FileResponse(path, media_type=media)

    static_dir = service.config.static_dir
    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
