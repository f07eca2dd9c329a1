"""Front-end processor runtime and simulated device models."""

from iccs.fep.devices import (
    ARMABLE_KINDS,
    DEVICE_KINDS,
    AlreadyArmed,
    InvalidDeviceParams,
    KindMismatch,
    LimitViolation,
    NotArmable,
    decode_frame,
    encode_frame,
)
from iccs.fep.runtime import (
    CommandAck,
    DuplicatePointId,
    Fep,
    NotReservationHolder,
    PointSpec,
    ShotUnknown,
    StatusReading,
    UnknownPoint,
)

__all__ = [
    "ARMABLE_KINDS",
    "AlreadyArmed",
    "CommandAck",
    "DEVICE_KINDS",
    "DuplicatePointId",
    "Fep",
    "InvalidDeviceParams",
    "KindMismatch",
    "LimitViolation",
    "NotArmable",
    "NotReservationHolder",
    "PointSpec",
    "ShotUnknown",
    "StatusReading",
    "UnknownPoint",
    "decode_frame",
    "encode_frame",
]
