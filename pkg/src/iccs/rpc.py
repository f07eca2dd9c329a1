"""JSON request/reply conventions on top of opaque bus payloads.

Handlers raise ordinary exceptions; the bus carries them as RequestFailed
with a "ClassName: detail" message. `call_json` re-raises a registered
exception class on the caller side so service errors keep their types
across the bus.
"""

from __future__ import annotations

import json
from typing import Any, Callable

from iccs.bus.core import RequestFailed

_ERROR_REGISTRY: dict[str, type[Exception]] = {}


def register_errors(*classes: type[Exception]) -> None:
    for cls in classes:
        _ERROR_REGISTRY[cls.__name__] = cls


def call_json(bus: Any, target: str, payload: dict, deadline_s: float,
              source: str = "anon") -> dict:
    """Send a JSON request; re-raise typed service errors on failure."""
    try:
        reply = bus.request(target, json.dumps(payload).encode(),
                            deadline_s, source=source)
    except RequestFailed as exc:
        raise _map_error(str(exc)) from None
    return json.loads(reply.decode()) if reply else {}


def _map_error(text: str) -> Exception:
    name, _, detail = text.partition(": ")
    cls = _ERROR_REGISTRY.get(name)
    if cls is None:
        return RequestFailed(text)
    return cls(detail or text)


def json_handler(dispatch: Callable[[dict], dict | None]) -> Callable[[bytes], bytes]:
    """Wrap a dict-in/dict-out function as a bus payload handler."""

    def handler(payload: bytes) -> bytes:
        args = json.loads(payload.decode()) if payload else {}
        result = dispatch(args)
        return json.dumps(result if result is not None else {}).encode()

    return handler
