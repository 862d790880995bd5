"""Blinded-read backend: session creation with randomized blinded pairing,
rating capture with an append-only log, preference banding, and summaries.

Blinding: clients only ever see the payload produced by `serve_pair`, whose
field set is a fixed whitelist; volume origin (left/right assignment) and the
generating model never leave the server. Judgments are normalized to
synthetic-relative orientation before any aggregation.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DomainError
from ..volume import Volume3D

SCHEMA_VERSION = 1

CRITERIA = (
    "image_detail",
    "image_noise",
    "fll_detectability",
    "diagnostic_confidence",
)
JUDGMENTS = ("left_better", "equal", "right_better", "not_assessable")

PREFERENCE_LEVELS = (
    "strong_real",
    "moderate_real",
    "slight_real",
    "none",
    "slight_synth",
    "moderate_synth",
    "strong_synth",
)

# payload whitelist: serve_pair may emit exactly these keys
PAIR_PAYLOAD_FIELDS = frozenset(
    {
        "schema_version",
        "pair_id",
        "slice_index",
        "n_slices",
        "left_image",
        "right_image",
        "left_window",
        "right_window",
        "height",
        "width",
    }
)


@dataclass
class ReadCandidate:
    patient_id: str
    real: Volume3D
    synthetic: Volume3D
    model_id: str
    cohort: str | None = None


@dataclass
class PairAssignment:
    pair_id: str
    patient_id: str
    left_source: str  # "real" | "synthetic" -- server-side only
    model_id: str
    cohort: str | None = None


@dataclass
class Rating:
    pair_id: str
    criterion: str
    judgment: str
    timestamp: str = ""

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise DomainError(f"unknown criterion {self.criterion!r}")
        if self.judgment not in JUDGMENTS:
            raise DomainError(f"unknown judgment {self.judgment!r}")


@dataclass
class ReadSession:
    session_id: str
    reader_id: str
    pairs: list[PairAssignment]
    created_at: str
    status: str = "open"
    ratings: dict = field(default_factory=dict)  # (pair_id, criterion) -> Rating
    volumes: dict = field(default_factory=dict)  # pair_id -> (left, right), server-side

    def pair(self, pair_id: str) -> PairAssignment:
        for pair in self.pairs:
            if pair.pair_id == pair_id:
                return pair
        raise DomainError(f"unknown pair {pair_id!r}")

    @property
    def cohort_mix(self) -> dict[str, int]:
        mix: dict[str, int] = {}
        for pair in self.pairs:
            key = pair.cohort or "unlabelled"
            mix[key] = mix.get(key, 0) + 1
        return mix

    @property
    def progress(self) -> tuple[int, int]:
        return len(self.ratings), len(self.pairs) * len(CRITERIA)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def create_session(
    reader_id: str,
    candidates: list[ReadCandidate],
    n_pairs: int = 15,
    seed: int = 0,
    created_at: str | None = None,
) -> ReadSession:
    """Select pairs, randomize presentation order and side assignment.

    Deterministic under `seed`. When both IoD and OoD candidates exist, each
    cohort contributes at least one pair.
    """
    if len(candidates) < n_pairs:
        raise DomainError(
            f"need at least {n_pairs} candidates, got {len(candidates)}"
        )
    rng = np.random.default_rng([seed, 0x8EAD])
    order = list(rng.permutation(len(candidates)))
    chosen = order[:n_pairs]

    cohorts_all = {c.cohort for c in candidates if c.cohort}
    if len(cohorts_all) > 1 and n_pairs >= len(cohorts_all):
        for cohort in sorted(cohorts_all):
            if not any(candidates[i].cohort == cohort for i in chosen):
                replacement = next(
                    i for i in order if candidates[i].cohort == cohort
                )
                # evict the last pair of the overrepresented remainder
                for j in range(n_pairs - 1, -1, -1):
                    others = [k for k in chosen if k != chosen[j]]
                    if {candidates[i].cohort for i in others} >= cohorts_all - {cohort}:
                        chosen[j] = replacement
                        break

    rng.shuffle(chosen)  # presentation order is randomized
    session_id = hashlib.sha1(
        f"{reader_id}|{seed}|{n_pairs}".encode()
    ).hexdigest()[:12]
    pairs = []
    volumes = {}
    for idx, cand_idx in enumerate(chosen):
        cand = candidates[cand_idx]
        left_is_real = bool(rng.random() < 0.5)
        pair_id = f"{session_id}-{idx:02d}"
        pairs.append(
            PairAssignment(
                pair_id=pair_id,
                patient_id=cand.patient_id,
                left_source="real" if left_is_real else "synthetic",
                model_id=cand.model_id,
                cohort=cand.cohort,
            )
        )
        volumes[pair_id] = (
            (cand.real, cand.synthetic) if left_is_real else (cand.synthetic, cand.real)
        )
    return ReadSession(
        session_id=session_id,
        reader_id=reader_id,
        pairs=pairs,
        created_at=created_at if created_at is not None else _now(),
        volumes=volumes,
    )


def _render_slice(v: Volume3D, z: int) -> tuple[str, tuple[float, float]]:
    """8-bit grayscale PNG of one axial slice after 2-98 percentile windowing."""
    lo, hi = np.percentile(v.data, [2.0, 98.0])
    if hi <= lo:
        lo, hi = float(v.data.min()), float(v.data.min() + 1.0)
    img = np.clip((v.data[:, :, z] - lo) / (hi - lo), 0.0, 1.0)
    png = Image.fromarray((img * 255).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    png.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii"), (float(lo), float(hi))


def serve_pair(session: ReadSession, pair_id: str, slice_index: int) -> dict:
    """Blinded payload: two rendered slices plus whitelisted metadata only."""
    if session.status != "open":
        raise DomainError(f"session {session.session_id} is not open")
    session.pair(pair_id)  # raises on unknown pair
    left, right = session.volumes[pair_id]
    n_slices = left.shape[2]
    if not 0 <= slice_index < n_slices:
        raise DomainError(f"slice index {slice_index} outside 0..{n_slices - 1}")
    left_png, left_window = _render_slice(left, slice_index)
    right_png, right_window = _render_slice(right, slice_index)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "pair_id": pair_id,
        "slice_index": slice_index,
        "n_slices": n_slices,
        "left_image": left_png,
        "right_image": right_png,
        "left_window": list(left_window),
        "right_window": list(right_window),
        "height": left.shape[0],
        "width": left.shape[1],
    }
    assert set(payload) == PAIR_PAYLOAD_FIELDS
    return payload


class RatingLog:
    """Append-only JSONL record of ratings; derived state is rebuilt by replay."""

    def __init__(self, path):
        self.path = Path(path)

    def append(self, session_id: str, rating: Rating) -> None:
        line = json.dumps(
            {
                "session_id": session_id,
                "pair_id": rating.pair_id,
                "criterion": rating.criterion,
                "judgment": rating.judgment,
                "timestamp": rating.timestamp,
            },
            sort_keys=True,
        )
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    def entries(self) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                out.append(json.loads(line))
        return out


def record_rating(
    session: ReadSession, rating: Rating, log: RatingLog | None = None
) -> dict:
    """Validate, persist, and apply one rating; completes the session once
    every (pair, criterion) cell is filled."""
    if session.status != "open":
        raise DomainError(f"session {session.session_id} is not open")
    session.pair(rating.pair_id)
    key = (rating.pair_id, rating.criterion)
    if key in session.ratings:
        raise DomainError(
            f"duplicate rating for pair {rating.pair_id} / {rating.criterion}"
        )
    if not rating.timestamp:
        rating = replace(rating, timestamp=_now())
    if log is not None:
        log.append(session.session_id, rating)
    session.ratings[key] = rating
    done, total = session.progress
    if done == total:
        session.status = "complete"
    return {"recorded": True, "complete": session.status == "complete"}


def replay_log(log: RatingLog, sessions: dict[str, ReadSession]) -> None:
    """Rebuild rating state of fresh sessions from the durable log."""
    for entry in log.entries():
        session = sessions.get(entry["session_id"])
        if session is None:
            continue
        rating = Rating(
            pair_id=entry["pair_id"],
            criterion=entry["criterion"],
            judgment=entry["judgment"],
            timestamp=entry["timestamp"],
        )
        record_rating(session, rating, log=None)


_THIRD = 100.0 / 3.0


def preference_level(proportion: float) -> str:
    """Band a better-or-equal percentage into the seven preference levels.

    Exactly 50% maps to "none"; synthetic bands are half-open upward
    ((50, 66.67], (66.67, 83.34], (83.34, 100]) and real bands mirror them
    below 50%.
    """
    if not 0.0 <= proportion <= 100.0:
        raise DomainError(f"proportion {proportion} outside [0, 100]")
    if proportion == 50.0:
        return "none"
    if proportion > 50.0:
        if proportion <= 2 * _THIRD:
            return "slight_synth"
        if proportion <= 2.5 * _THIRD:
            return "moderate_synth"
        return "strong_synth"
    if proportion >= _THIRD:
        return "slight_real"
    if proportion >= 0.5 * _THIRD:
        return "moderate_real"
    return "strong_real"


@dataclass(frozen=True)
class PreferenceSummary:
    model_id: str
    criterion: str
    reader_id: str | None  # None = pooled over readers
    proportion: float  # percent better-or-equal for the synthetic side
    level: str
    numerator: int
    denominator: int


def _synthetic_relative(pair: PairAssignment, judgment: str) -> str | None:
    if judgment == "not_assessable":
        return None
    if judgment == "equal":
        return "equal"
    left_better = judgment == "left_better"
    synth_on_left = pair.left_source == "synthetic"
    return "synth" if left_better == synth_on_left else "real"


def summarize(sessions: list[ReadSession]) -> list[PreferenceSummary]:
    """Per (model, criterion) better-or-equal proportions, per reader and
    pooled. 'not_assessable' ratings shrink the denominator."""
    for session in sessions:
        if session.status != "complete":
            raise DomainError(f"session {session.session_id} is incomplete")
    counts: dict[tuple, list[int]] = {}  # key -> [better_or_equal, applicable]
    for session in sessions:
        for (pair_id, criterion), rating in session.ratings.items():
            pair = session.pair(pair_id)
            outcome = _synthetic_relative(pair, rating.judgment)
            if outcome is None:
                continue
            for reader in (session.reader_id, None):
                key = (pair.model_id, criterion, reader)
                cell = counts.setdefault(key, [0, 0])
                cell[1] += 1
                if outcome in ("synth", "equal"):
                    cell[0] += 1
    summaries = []
    for (model_id, criterion, reader), (num, den) in sorted(
        counts.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2] or "")
    ):
        proportion = 100.0 * num / den
        summaries.append(
            PreferenceSummary(
                model_id=model_id,
                criterion=criterion,
                reader_id=reader,
                proportion=proportion,
                level=preference_level(proportion),
                numerator=num,
                denominator=den,
            )
        )
    return summaries
