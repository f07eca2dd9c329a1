/** Thin DOM layer: paints the view model into the four console regions
 * (countdown banner, subsystem board, alert panel, device/video panel).
 * All state lives in the model; this file only mirrors it.
 */

import type { ConsoleSession } from "./session.js";
import type { ViewModel } from "./types.js";

export class ConsoleRenderer {
  private lastPaintMs = 0;

  constructor(private readonly root: Document,
              private readonly session: ConsoleSession) {}

  paint(model: ViewModel): void {
    const t0 = performance.now();
    this.banner(model);
    this.board(model);
    this.alerts(model);
    this.devicePanel(model);
    this.ackLine(model);
    this.lastPaintMs = performance.now() - t0;
  }

  get paintTimeMs(): number {
    return this.lastPaintMs;
  }

  private el(id: string): HTMLElement {
    const node = this.root.getElementById(id);
    if (node === null) {
      throw new Error(`missing console region #${id}`);
    }
    return node;
  }

  private banner(model: ViewModel): void {
    const phase = model.countdown.phase;
    this.el("countdown-time").textContent =
      phase === "fired" || phase === "post_shot" ? "FIRED"
        : `T-${model.countdown.display}`;
    const label = this.el("countdown-phase");
    label.textContent = phase
      + (phase === "held" && model.countdown.holdReason
         ? ` (${model.countdown.holdReason})` : "");
    label.className = `phase phase-${phase}`;
    this.el("shot-id").textContent = model.countdown.shotId ?? "-";
    const conn = this.el("connection");
    conn.textContent = model.connection;
    conn.className = `conn conn-${model.connection}`;
    this.el("banner-unreachable").style.display =
      model.connection === "unreachable" ? "block" : "none";
  }

  private board(model: ViewModel): void {
    const board = this.el("board");
    board.replaceChildren();
    for (const [name, state] of Object.entries(model.board).sort()) {
      const cell = this.root.createElement("div");
      cell.className = `subsystem health-${state.health}`;
      cell.title = state.detail;
      const dot = this.root.createElement("span");
      dot.className = "dot";
      cell.append(dot, name);
      board.append(cell);
    }
    this.el("ready-flag").textContent = model.ready ? "READY" : "NOT READY";
    this.el("ready-flag").className = model.ready ? "ready" : "not-ready";
  }

  private alerts(model: ViewModel): void {
    const list = this.el("alerts");
    list.replaceChildren();
    for (const alert of model.alerts) {
      const row = this.root.createElement("div");
      row.className = `alert sev-${alert.severity} state-${alert.state}`;
      row.dataset.alertId = alert.alertId;
      const text = this.root.createElement("span");
      text.textContent =
        `[${alert.severity}] ${alert.source}: ${alert.text}`;
      row.append(text);
      for (const action of ["acknowledge", "clear"] as const) {
        const button = this.root.createElement("button");
        button.textContent = action === "acknowledge" ? "ack" : "clear";
        button.onclick = () => void this.session.gateway.postJson(
          "/alert", { alert_id: alert.alertId, action,
                      operator: this.session.operatorId });
        row.append(button);
      }
      list.append(row);
    }
    const cue = this.el("audible-cue");
    cue.style.display = model.audibleCue ? "inline" : "none";
  }

  private devicePanel(model: ViewModel): void {
    const panel = this.el("device-panel");
    if (model.selected === null) {
      panel.dataset.point = "";
      this.el("device-title").textContent = "no device selected";
      this.setControlsEnabled(false);
      return;
    }
    const { pointId, value, health, reserved } = model.selected;
    panel.dataset.point = pointId;
    this.el("device-title").textContent = pointId;
    this.el("device-value").textContent =
      `${JSON.stringify(value)} [${health}]`;
    this.setControlsEnabled(reserved);
  }

  private setControlsEnabled(enabled: boolean): void {
    for (const id of ["jog-minus", "jog-plus", "shutter-open",
                      "shutter-close"]) {
      (this.el(id) as HTMLButtonElement).disabled = !enabled;
    }
  }

  private ackLine(model: ViewModel): void {
    const line = this.el("ack-line");
    if (model.lastAck === null) {
      line.textContent = "";
      return;
    }
    const { op, ok, error, reason } = model.lastAck;
    line.textContent = ok ? `${op}: ok`
      : `${op}: rejected - ${error ?? "error"}${reason ? ` (${reason})` : ""}`;
    line.className = ok ? "ack-ok" : "ack-rejected";
  }
}

/** Wire the fixed controls to the session; called once at startup. */
export function wireControls(root: Document, session: ConsoleSession): void {
  const $ = (id: string) => root.getElementById(id) as HTMLElement;
  const selectedPoint = () =>
    ($("device-panel") as HTMLElement).dataset.point ?? "";

  ($("device-select") as HTMLInputElement).onchange = (ev) => {
    session.selectDevice((ev.target as HTMLInputElement).value || null);
  };
  $("reserve-btn").onclick = () => void session.reserve(selectedPoint());
  $("release-btn").onclick = () => void session.release(selectedPoint());
  $("jog-minus").onclick = () => void session.issueCommand(
    selectedPoint(), "move_relative", { steps: -10 });
  $("jog-plus").onclick = () => void session.issueCommand(
    selectedPoint(), "move_relative", { steps: 10 });
  $("shutter-open").onclick = () => void session.issueCommand(
    selectedPoint(), "open", {});
  $("shutter-close").onclick = () => void session.issueCommand(
    selectedPoint(), "close", {});
  $("hold-btn").onclick = () => void session.shotControl(
    "hold", "operator hold");
  $("resume-btn").onclick = () => void session.shotControl("resume", "");
  $("abort-btn").onclick = () => {
    // destructive action guard: explicit confirmation before the POST
    if (root.defaultView?.confirm("Abort the countdown?")) {
      void session.shotControl("abort", "operator abort", true);
    }
  };
  ($("video-select") as HTMLInputElement).onchange = (ev) => {
    const cameraId = (ev.target as HTMLInputElement).value;
    ($("video-frame") as HTMLImageElement).src =
      cameraId ? session.gateway.videoUrl(cameraId) : "";
  };
}
