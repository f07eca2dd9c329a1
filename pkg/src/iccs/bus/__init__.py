"""Distribution bus: naming, request/reply, publish/subscribe, streams."""

from iccs.bus.core import (
    Bus,
    BusError,
    DeadlineExceeded,
    Endpoint,
    MalformedName,
    MalformedTopic,
    NameNotFound,
    NameRecord,
    RequestFailed,
    ServiceHost,
    StaleIncarnation,
    StreamNotFound,
    Subscription,
    TargetUnavailable,
    topic_matches,
    validate_name,
)
from iccs.bus.envelope import Envelope, EnvelopeError, Kind

__all__ = [
    "Bus",
    "BusError",
    "DeadlineExceeded",
    "Endpoint",
    "Envelope",
    "EnvelopeError",
    "Kind",
    "MalformedName",
    "MalformedTopic",
    "NameNotFound",
    "NameRecord",
    "RequestFailed",
    "ServiceHost",
    "StaleIncarnation",
    "StreamNotFound",
    "Subscription",
    "TargetUnavailable",
    "topic_matches",
    "validate_name",
]
