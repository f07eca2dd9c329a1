"""Framework services: alerts, event logging, reservations, shot archiving."""

from iccs.services.alerts import Alert, AlertService, IllegalTransition, UnknownAlert
from iccs.services.archive import (
    ArchiveService,
    ChecksumMismatch,
    DuplicateRecord,
    FetchedRecord,
)
from iccs.services.events import (
    CATEGORIES,
    EventLog,
    EventRecord,
    InvalidRange,
    StorageFailure,
)
from iccs.services.reservations import (
    AlreadyReserved,
    NotHolder,
    NotReserved,
    Reservation,
    ReservationService,
)
from iccs.services.runtime import FrameworkServices

__all__ = [
    "Alert",
    "AlertService",
    "AlreadyReserved",
    "ArchiveService",
    "CATEGORIES",
    "ChecksumMismatch",
    "DuplicateRecord",
    "EventLog",
    "EventRecord",
    "FetchedRecord",
    "FrameworkServices",
    "IllegalTransition",
    "InvalidRange",
    "NotHolder",
    "NotReserved",
    "Reservation",
    "ReservationService",
    "StorageFailure",
    "UnknownAlert",
]
