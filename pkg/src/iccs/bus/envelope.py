"""Binary message envelope shared by the in-process and TCP transports.

Wire layout (all integers big-endian), preceded on a TCP stream by a
4-byte big-endian frame length covering everything below:

    offset  size  field
    0       1     kind            (1 request, 2 reply, 3 event, 4 stream frame)
    1       1     flags           (bit 0: deadline set, bit 1: error reply)
    2       8     correlation_id  (request/reply pairing; subscription id for
                                   forwarded events; stream id hash unused)
    10      8     sent_at_ns      (sender clock, signed)
    18      8     deadline_ns     (request deadline duration in ns; 0 unless flag)
    26      8     stream_seq      (strictly increasing per stream; else 0)
    34      2+n   source          (u16 length + UTF-8 sender node id)
    ..      2+n   topic_or_target (u16 length + UTF-8)
    ..      4+n   payload         (u32 length + opaque bytes)

The in-process transport hands `Envelope` objects around directly; encode
followed by decode must reproduce the object bit-for-bit, which the test
suite asserts for every kind.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

_HEADER = struct.Struct(">BBQqQQ")

FLAG_DEADLINE = 0x01
FLAG_ERROR = 0x02

MAX_NAME_BYTES = 0xFFFF
MAX_PAYLOAD_BYTES = 0xFFFFFFFF


class EnvelopeError(ValueError):
    """Raised when bytes cannot be decoded as an envelope."""


class Kind(IntEnum):
    REQUEST = 1
    REPLY = 2
    EVENT = 3
    STREAM_FRAME = 4


@dataclass(frozen=True)
class Envelope:
    """One bus message. Payload bytes are opaque to the transport."""

    kind: Kind
    correlation_id: int
    topic_or_target: str
    payload: bytes
    sent_at_ns: int = 0
    deadline_ns: int | None = None
    stream_seq: int = 0
    source: str = ""
    flags: int = field(default=0)

    def encode(self) -> bytes:
        source = self.source.encode("utf-8")
        topic = self.topic_or_target.encode("utf-8")
        if len(source) > MAX_NAME_BYTES or len(topic) > MAX_NAME_BYTES:
            raise EnvelopeError("source/topic exceeds u16 length prefix")
        if len(self.payload) > MAX_PAYLOAD_BYTES:
            raise EnvelopeError("payload exceeds u32 length prefix")
        flags = self.flags
        deadline = self.deadline_ns or 0
        if self.deadline_ns is not None:
            flags |= FLAG_DEADLINE
        head = _HEADER.pack(
            int(self.kind), flags, self.correlation_id, self.sent_at_ns,
            deadline, self.stream_seq,
        )
        return b"".join((
            head,
            struct.pack(">H", len(source)), source,
            struct.pack(">H", len(topic)), topic,
            struct.pack(">I", len(self.payload)), self.payload,
        ))

    @property
    def is_error(self) -> bool:
        return bool(self.flags & FLAG_ERROR)


def decode(data: bytes) -> Envelope:
    """Decode one envelope from a complete frame (no length prefix)."""
    try:
        kind_raw, flags, corr, sent_at, deadline, seq = _HEADER.unpack_from(data, 0)
        off = _HEADER.size
        (src_len,) = struct.unpack_from(">H", data, off)
        off += 2
        source = data[off:off + src_len].decode("utf-8")
        off += src_len
        (topic_len,) = struct.unpack_from(">H", data, off)
        off += 2
        topic = data[off:off + topic_len].decode("utf-8")
        off += topic_len
        (pay_len,) = struct.unpack_from(">I", data, off)
        off += 4
        payload = data[off:off + pay_len]
        if len(payload) != pay_len or off + pay_len != len(data):
            raise EnvelopeError("truncated or oversized envelope frame")
        kind = Kind(kind_raw)
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise EnvelopeError(f"bad envelope: {exc}") from exc
    return Envelope(
        kind=kind,
        correlation_id=corr,
        topic_or_target=topic,
        payload=payload,
        sent_at_ns=sent_at,
        deadline_ns=deadline if flags & FLAG_DEADLINE else None,
        stream_seq=seq,
        source=source,
        flags=flags & ~FLAG_DEADLINE,
    )
