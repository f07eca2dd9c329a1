"""Subsystem supervisors: alignment, energetics, power, diagnostics, rollups."""

from iccs.supervisors.alignment import (
    AlignmentChannel,
    AlignmentSupervisor,
    AlignmentTrace,
    DeviceFault,
    ReservationMissing,
    ZeroIntensity,
    compute_centroid,
)
from iccs.supervisors.base import Supervisor
from iccs.supervisors.diagnostics import DiagnosticsSupervisor, PartialCollection
from iccs.supervisors.energetics import (
    EnergeticsSupervisor,
    GoalOutOfEnvelope,
    SetpointModel,
)
from iccs.supervisors.power import (
    AlreadyActive,
    ChargeModule,
    PermissiveDenied,
    PowerSupervisor,
)
from iccs.supervisors.rollup import StatusSupervisor

__all__ = [
    "AlignmentChannel",
    "AlignmentSupervisor",
    "AlignmentTrace",
    "AlreadyActive",
    "ChargeModule",
    "DeviceFault",
    "DiagnosticsSupervisor",
    "EnergeticsSupervisor",
    "GoalOutOfEnvelope",
    "PartialCollection",
    "PermissiveDenied",
    "PowerSupervisor",
    "ReservationMissing",
    "SetpointModel",
    "StatusSupervisor",
    "Supervisor",
    "ZeroIntensity",
    "compute_centroid",
]
