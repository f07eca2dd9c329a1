"""Alert management: severities, lifecycle, and bus notification.

Raising an alert never fails. Overload shedding applies only to severities
below the configured floor once the active set exceeds the depth limit;
serious and critical alerts are always kept.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field

from iccs.clock import Clock
from iccs.rpc import register_errors
from iccs.services.events import EventLog

SEVERITIES = ("info", "warning", "serious", "critical")
_SEV_RANK = {name: i for i, name in enumerate(SEVERITIES)}

# state -> legal actions
_TRANSITIONS = {
    "raised": {"acknowledge": "acknowledged", "clear": "cleared"},
    "acknowledged": {"clear": "cleared"},
    "cleared": {},
}


class UnknownAlert(Exception):
    pass


class IllegalTransition(Exception):
    pass


register_errors(UnknownAlert, IllegalTransition)


@dataclass
class Alert:
    alert_id: str
    source: str
    severity: str
    text: str
    state: str = "raised"
    raised_ns: int = 0
    acknowledged_ns: int | None = None
    cleared_ns: int | None = None
    raised_iso: str = ""
    actor_history: list[tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "source": self.source,
            "severity": self.severity,
            "text": self.text,
            "state": self.state,
            "raised_ns": self.raised_ns,
            "raised_at": self.raised_iso,
            "acknowledged_ns": self.acknowledged_ns,
            "cleared_ns": self.cleared_ns,
        }


class AlertService:
    """Raise, acknowledge, and clear alerts; every change is published."""

    def __init__(self, clock: Clock, events: EventLog, publish=None,
                 shed_below: str = "warning", max_active: int = 10_000):
        self.clock = clock
        self.events = events
        self.publish = publish  # callable(topic, payload_bytes) or None
        self.shed_below = shed_below
        self.max_active = max_active
        self.shed_count = 0
        self._lock = threading.Lock()
        self._alerts: dict[str, Alert] = {}
        self._next_id = 1

    def raise_alert(self, source: str, severity: str, text: str) -> str:
        if severity not in SEVERITIES:
            severity = "serious"  # unknown severities escalate, never drop
        source = source or "(unknown)"
        text = text or "(no text)"
        now = self.clock.now_ns()
        with self._lock:
            if (_SEV_RANK[severity] < _SEV_RANK[self.shed_below]
                    and self._active_count() >= self.max_active):
                self.shed_count += 1
                return ""
            alert = Alert(
                alert_id=f"alert-{self._next_id:06d}",
                source=source, severity=severity, text=text,
                raised_ns=now, raised_iso=self.clock.iso(now))
            self._next_id += 1
            self._alerts[alert.alert_id] = alert
        category = "error" if _SEV_RANK[severity] >= _SEV_RANK["serious"] else "device_status"
        try:
            self.events.log(source, category, {
                "alert_id": alert.alert_id, "severity": severity,
                "state": "raised", "text": text})
        except Exception:
            pass  # alerts must not fail on storage trouble
        self._notify(alert)
        return alert.alert_id

    def transition(self, alert_id: str, action: str, actor: str) -> str:
        with self._lock:
            alert = self._alerts.get(alert_id)
            if alert is None:
                raise UnknownAlert(alert_id)
            new_state = _TRANSITIONS[alert.state].get(action)
            if new_state is None:
                raise IllegalTransition(
                    f"{alert_id}: cannot {action} while {alert.state}")
            now = self.clock.now_ns()
            alert.state = new_state
            if new_state == "acknowledged":
                alert.acknowledged_ns = now
            else:
                alert.cleared_ns = now
            alert.actor_history.append((action, actor))
        self.events.log(actor or "(unknown)", "operator_action", {
            "alert_id": alert_id, "action": action, "state": new_state})
        self._notify(alert)
        return new_state

    def _notify(self, alert: Alert) -> None:
        if self.publish is None:
            return
        body = alert.to_dict()
        body["wall_ns"] = time.monotonic_ns()
        try:
            self.publish(f"alert/{alert.severity}",
                         json.dumps(body, sort_keys=True).encode())
        except Exception:
            pass

    def get(self, alert_id: str) -> Alert:
        with self._lock:
            alert = self._alerts.get(alert_id)
        if alert is None:
            raise UnknownAlert(alert_id)
        return alert

    def active(self) -> list[Alert]:
        """Uncleared alerts, most severe first, oldest first within severity."""
        with self._lock:
            live = [a for a in self._alerts.values() if a.state != "cleared"]
        return sorted(live, key=lambda a: (-_SEV_RANK[a.severity], a.raised_ns))

    def _active_count(self) -> int:
        return sum(1 for a in self._alerts.values() if a.state != "cleared")

    def count(self) -> int:
        with self._lock:
            return len(self._alerts)
