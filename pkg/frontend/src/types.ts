/** Wire types for the gateway interface and the console view model. */

export type FrameKind = "tick" | "phase" | "alert" | "readiness" | "status";

/** One server-push frame as parsed off the event stream. */
export interface GatewayFrame {
  kind: FrameKind;
  data: Record<string, unknown>;
}

export interface TickData {
  t_minus_ms: number;
  t_minus_s: number;
  phase: string;
  shot_id: string | null;
}

export interface PhaseData {
  phase: string;
  shot_id: string | null;
  reason?: string;
}

export interface AlertData {
  alert_id: string;
  source: string;
  severity: "info" | "warning" | "serious" | "critical";
  text: string;
  state: "raised" | "acknowledged" | "cleared";
  raised_ns: number;
  raised_at: string;
}

export interface ReadinessData {
  name: string;
  health: "ok" | "warning" | "fault";
  detail: string;
}

export interface StatusSnapshot {
  ready: boolean;
  subsystems: Record<string, { health: string; detail: string }>;
  countdown: { phase: string; t_minus_s: number; hold_reason: string; shot_id: string | null };
  alert_count: number;
  mode: string;
}

export interface AlertsSnapshot {
  alerts: AlertData[];
}

export interface CommandAck {
  ok: boolean;
  error?: string;
  reason?: string;
  result?: unknown;
}

export type Connection = "connecting" | "open" | "unreachable";

export interface AlertRow {
  alertId: string;
  source: string;
  severity: AlertData["severity"];
  text: string;
  state: "raised" | "acknowledged";
  raisedNs: number;
  raisedAt: string;
}

export interface DevicePanel {
  pointId: string;
  value: unknown;
  health: string;
  detail: string;
  reserved: boolean;
}

/**
 * Everything the console displays. Derived purely from gateway snapshots
 * plus the ordered frame stream; the client invents no state of its own.
 */
export interface ViewModel {
  connection: Connection;
  countdown: {
    phase: string;
    tMinusS: number;
    display: string;
    shotId: string | null;
    holdReason: string;
  };
  ready: boolean;
  board: Record<string, { health: string; detail: string }>;
  alerts: AlertRow[];
  audibleCue: boolean;
  selected: DevicePanel | null;
  lastAck: { op: string; ok: boolean; error?: string; reason?: string } | null;
  notices: string[];
}
