from .core import (
    CRITERIA,
    JUDGMENTS,
    PreferenceSummary,
    Rating,
    ReadCandidate,
    ReadSession,
    RatingLog,
    create_session,
    preference_level,
    record_rating,
    replay_log,
    serve_pair,
    summarize,
)

__all__ = [
    "CRITERIA",
    "JUDGMENTS",
    "PreferenceSummary",
    "Rating",
    "ReadCandidate",
    "ReadSession",
    "RatingLog",
    "create_session",
    "preference_level",
    "record_rating",
    "replay_log",
    "serve_pair",
    "summarize",
]
