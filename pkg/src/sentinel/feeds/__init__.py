"""OSINT feed ingestion: fetch, normalize, sync, and scheduled polling."""

from .ingest import (
    AuthRejected,
    FeedRegistry,
    FeedScheduler,
    FeedSource,
    FeedUnavailable,
    MalformedPayload,
    SyncReport,
    fetch,
    normalize,
    sync,
)

__all__ = [
    "AuthRejected",
    "FeedRegistry",
    "FeedScheduler",
    "FeedSource",
    "FeedUnavailable",
    "MalformedPayload",
    "SyncReport",
    "fetch",
    "normalize",
    "sync",
]
