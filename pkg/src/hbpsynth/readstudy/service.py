"""HTTP/JSON interface for the blinded read, consumed by the viewer UI.

All responses carry schema_version. Pair payloads are produced exclusively
by core.serve_pair, so origin information cannot leak through this layer.
Sessions are recreated deterministically from their recorded creation
parameters and the append-only rating log on restart.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel

from ..errors import DomainError
from .core import (
    CRITERIA,
    RatingLog,
    Rating,
    ReadCandidate,
    ReadSession,
    SCHEMA_VERSION,
    create_session,
    record_rating,
    replay_log,
    serve_pair,
    summarize,
)


class ReadStudyStore:
    """Candidates plus durable session/rating state under one directory."""

    def __init__(self, candidates: list[ReadCandidate], state_dir):
        self.candidates = candidates
        self.state_dir = Path(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        self.log = RatingLog(self.state_dir / "ratings.jsonl")
        self.sessions_file = self.state_dir / "sessions.jsonl"
        self.sessions: dict[str, ReadSession] = {}
        self.restore()

    def restore(self) -> None:
        """Recreate sessions from their creation records, replay ratings."""
        self.sessions.clear()
        if self.sessions_file.exists():
            for line in self.sessions_file.read_text().splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                session = create_session(
                    reader_id=rec["reader_id"],
                    candidates=self.candidates,
                    n_pairs=rec["n_pairs"],
                    seed=rec["seed"],
                    created_at=rec["created_at"],
                )
                self.sessions[session.session_id] = session
        replay_log(self.log, self.sessions)

    def create(self, reader_id: str, n_pairs: int, seed: int) -> ReadSession:
        session = create_session(reader_id, self.candidates, n_pairs, seed)
        if session.session_id in self.sessions:
            raise DomainError(
                f"session {session.session_id} already exists (same reader and seed)"
            )
        with open(self.sessions_file, "a", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {
                        "session_id": session.session_id,
                        "reader_id": reader_id,
                        "n_pairs": n_pairs,
                        "seed": seed,
                        "created_at": session.created_at,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
        self.sessions[session.session_id] = session
        return session

    def session(self, session_id: str) -> ReadSession:
        if session_id not in self.sessions:
            raise DomainError(f"unknown session {session_id!r}")
        return self.sessions[session_id]


class SessionRequest(BaseModel):
    reader_id: str
    n_pairs: int = 15
    seed: int = 0


class RatingRequest(BaseModel):
    pair_id: str
    criterion: str
    judgment: str


def _session_view(session: ReadSession) -> dict:
    done, total = session.progress
    return {
        "schema_version": SCHEMA_VERSION,
        "session_id": session.session_id,
        "reader_id": session.reader_id,
        "status": session.status,
        "created_at": session.created_at,
        "pair_ids": [p.pair_id for p in session.pairs],
        "criteria": list(CRITERIA),
        "progress": [done, total],
    }


def summaries_csv(summaries) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["reader_id", "model_id", "criterion", "proportion", "level", "numerator", "denominator"]
    )
    for s in summaries:
        writer.writerow(
            [
                s.reader_id or "pooled",
                s.model_id,
                s.criterion,
                f"{s.proportion:.2f}",
                s.level,
                s.numerator,
                s.denominator,
            ]
        )
    return buf.getvalue()


def create_app(store: ReadStudyStore) -> FastAPI:
    app = FastAPI(title="hbpsynth blinded read")

    def guard(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DomainError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.post("/v1/sessions")
    def post_session(req: SessionRequest):
        session = guard(store.create, req.reader_id, req.n_pairs, req.seed)
        return _session_view(session)

    @app.get("/v1/sessions")
    def list_sessions():
        return {
            "schema_version": SCHEMA_VERSION,
            "sessions": [
                _session_view(s) for s in store.sessions.values() if s.status == "open"
            ],
        }

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str):
        return _session_view(guard(store.session, session_id))

    @app.get("/v1/sessions/{session_id}/pairs/{pair_id}")
    def get_pair(session_id: str, pair_id: str, slice_index: int = 0):
        session = guard(store.session, session_id)
        return guard(serve_pair, session, pair_id, slice_index)

    @app.post("/v1/sessions/{session_id}/ratings")
    def post_rating(session_id: str, req: RatingRequest):
        session = guard(store.session, session_id)
        rating = guard(Rating, req.pair_id, req.criterion, req.judgment)
        ack = guard(record_rating, session, rating, store.log)
        return {"schema_version": SCHEMA_VERSION, **ack}

    @app.get("/v1/summary")
    def get_summary():
        complete = [s for s in store.sessions.values() if s.status == "complete"]
        summaries = guard(summarize, complete)
        return {
            "schema_version": SCHEMA_VERSION,
            "summaries": [asdict(s) for s in summaries],
        }

    @app.get("/v1/export/log", response_class=PlainTextResponse)
    def export_log():
        if not store.log.path.exists():
            return ""
        return store.log.path.read_text()

    @app.get("/v1/export/summary.csv", response_class=PlainTextResponse)
    def export_summary_csv():
        complete = [s for s in store.sessions.values() if s.status == "complete"]
        return summaries_csv(guard(summarize, complete))

    return app
