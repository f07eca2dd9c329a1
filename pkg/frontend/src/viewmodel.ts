/** Pure view-model reducer: (model, frame) -> model.
 *
 * Replaying the same snapshot and frame sequence always yields an
 * identical model, which is what the snapshot-replay tests assert.
 */

import type {
  AlertData,
  AlertRow,
  AlertsSnapshot,
  GatewayFrame,
  PhaseData,
  ReadinessData,
  StatusSnapshot,
  TickData,
  ViewModel,
} from "./types.js";

const SEVERITY_RANK: Record<string, number> = {
  info: 0, warning: 1, serious: 2, critical: 3,
};

const MAX_NOTICES = 50;

export function initialModel(): ViewModel {
  return {
    connection: "connecting",
    countdown: { phase: "idle", tMinusS: 0, display: formatTMinus(0),
                 shotId: null, holdReason: "" },
    ready: false,
    board: {},
    alerts: [],
    audibleCue: false,
    selected: null,
    lastAck: null,
    notices: [],
  };
}

/** "MM:SS.d" countdown display; negative times clamp to zero. */
export function formatTMinus(tMinusS: number): string {
  const clamped = Math.max(0, tMinusS);
  const minutes = Math.floor(clamped / 60);
  const seconds = clamped - minutes * 60;
  const whole = Math.floor(seconds);
  const tenths = Math.floor((seconds - whole) * 10 + 1e-9);
  const mm = String(minutes).padStart(2, "0");
  const ss = String(whole).padStart(2, "0");
  return `${mm}:${ss}.${tenths}`;
}

export function applySnapshot(model: ViewModel, status: StatusSnapshot,
                              alerts: AlertsSnapshot): ViewModel {
  const next = structuredClone(model);
  next.connection = "open";
  next.ready = status.ready;
  next.board = { ...status.subsystems };
  next.countdown = {
    phase: status.countdown.phase,
    tMinusS: status.countdown.t_minus_s,
    display: formatTMinus(status.countdown.t_minus_s),
    shotId: status.countdown.shot_id,
    holdReason: status.countdown.hold_reason,
  };
  next.alerts = [];
  for (const alert of alerts.alerts) {
    next.alerts = upsertAlert(next.alerts, alert);
  }
  return next;
}

/** Fold one event frame into the model; malformed frames leave it unchanged
 * apart from a logged notice. */
export function applyFrame(model: ViewModel, frame: GatewayFrame): ViewModel {
  try {
    switch (frame.kind) {
      case "tick":
        return applyTick(model, frame.data as unknown as TickData);
      case "phase":
        return applyPhase(model, frame.data as unknown as PhaseData);
      case "alert":
        return applyAlert(model, frame.data as unknown as AlertData);
      case "readiness":
        return applyReadiness(model, frame.data as unknown as ReadinessData);
      case "status":
        return applyStatus(model, frame.data);
      default:
        return notice(model, `skipped unknown frame kind ${String(frame.kind)}`);
    }
  } catch (err) {
    return notice(model, `malformed ${frame.kind} frame skipped: ${err}`);
  }
}

function applyTick(model: ViewModel, data: TickData): ViewModel {
  if (typeof data.t_minus_s !== "number" || typeof data.phase !== "string") {
    throw new Error("tick missing t_minus_s/phase");
  }
  const next = structuredClone(model);
  next.countdown.tMinusS = data.t_minus_s;
  next.countdown.display = formatTMinus(data.t_minus_s);
  next.countdown.phase = data.phase;
  next.countdown.shotId = data.shot_id ?? next.countdown.shotId;
  return next;
}

function applyPhase(model: ViewModel, data: PhaseData): ViewModel {
  if (typeof data.phase !== "string") {
    throw new Error("phase frame missing phase");
  }
  const next = structuredClone(model);
  next.countdown.phase = data.phase;
  next.countdown.shotId = data.shot_id ?? next.countdown.shotId;
  next.countdown.holdReason = data.phase === "held" ? (data.reason ?? "") : "";
  return next;
}

function applyAlert(model: ViewModel, data: AlertData): ViewModel {
  if (!data.alert_id || !(data.severity in SEVERITY_RANK)) {
    throw new Error("alert frame missing id/severity");
  }
  const next = structuredClone(model);
  next.alerts = upsertAlert(next.alerts, data);
  next.audibleCue = data.severity === "critical" && data.state === "raised";
  return next;
}

function applyReadiness(model: ViewModel, data: ReadinessData): ViewModel {
  if (!data.name) {
    throw new Error("readiness frame missing name");
  }
  const next = structuredClone(model);
  next.board[data.name] = { health: data.health, detail: data.detail ?? "" };
  next.ready = Object.values(next.board).every((s) => s.health !== "fault");
  return next;
}

function applyStatus(model: ViewModel, data: Record<string, unknown>): ViewModel {
  const pointId = data["point_id"];
  if (typeof pointId !== "string") {
    throw new Error("status frame missing point_id");
  }
  if (model.selected === null || model.selected.pointId !== pointId) {
    return model; // board dots come from readiness; panel is untouched
  }
  const next = structuredClone(model);
  next.selected = {
    ...next.selected!,
    value: data["value"],
    health: String(data["health"] ?? "ok"),
    detail: String(data["detail"] ?? ""),
  };
  return next;
}

/** Active alerts only, most severe first, oldest first within severity. */
function upsertAlert(rows: AlertRow[], data: AlertData): AlertRow[] {
  const rest = rows.filter((r) => r.alertId !== data.alert_id);
  if (data.state !== "cleared") {
    rest.push({
      alertId: data.alert_id,
      source: data.source,
      severity: data.severity,
      text: data.text,
      state: data.state,
      raisedNs: data.raised_ns,
      raisedAt: data.raised_at,
    });
  }
  rest.sort((a, b) =>
    SEVERITY_RANK[b.severity] - SEVERITY_RANK[a.severity]
    || a.raisedNs - b.raisedNs
    || a.alertId.localeCompare(b.alertId));
  return rest;
}

function notice(model: ViewModel, text: string): ViewModel {
  const next = structuredClone(model);
  next.notices.push(text);
  if (next.notices.length > MAX_NOTICES) {
    next.notices.shift();
  }
  return next;
}

export function setConnection(model: ViewModel,
                              connection: ViewModel["connection"]): ViewModel {
  const next = structuredClone(model);
  next.connection = connection;
  return next;
}

export function setAck(model: ViewModel,
                       ack: ViewModel["lastAck"]): ViewModel {
  const next = structuredClone(model);
  next.lastAck = ack;
  return next;
}

export function selectDevice(model: ViewModel, pointId: string | null,
                             reserved: boolean): ViewModel {
  const next = structuredClone(model);
  next.selected = pointId === null ? null
    : { pointId, value: null, health: "ok", detail: "", reserved };
  return next;
}
