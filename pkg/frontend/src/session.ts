/** Console session: snapshot + ordered event stream in, commands out.
 *
 * Holds no authority of its own: controls are offered only for resources
 * this operator has reserved, and every rejection rendered here came back
 * from the gateway verbatim. On connection loss the session shows the
 * unreachable banner and retries until the snapshot loads again.
 */

import { GatewayClient, GatewayError } from "./gateway.js";
import type { CommandAck, GatewayFrame, ViewModel } from "./types.js";
import {
  applyFrame,
  applySnapshot,
  initialModel,
  selectDevice,
  setAck,
  setConnection,
} from "./viewmodel.js";

export type Listener = (model: ViewModel) => void;

export class ConsoleSession {
  readonly sessionId: string;
  readonly reservations = new Set<string>();
  model: ViewModel = initialModel();

  private listeners: Listener[] = [];
  private abort = new AbortController();
  private stopped = false;

  constructor(readonly gateway: GatewayClient, readonly operatorId: string,
              private readonly retryDelayMs = 1000) {
    this.sessionId = `console-${operatorId}-${Date.now().toString(36)}`;
  }

  onChange(listener: Listener): void {
    this.listeners.push(listener);
  }

  private update(model: ViewModel): void {
    this.model = model;
    for (const listener of this.listeners) {
      listener(model);
    }
  }

  /** Fetch the snapshot and subscribe to the event stream; retries forever
   * until stopped, re-fetching the snapshot after every reconnect. */
  async run(): Promise<void> {
    while (!this.stopped) {
      try {
        await this.openOnce();
      } catch (err) {
        if (this.stopped) {
          return;
        }
        if (!(err instanceof GatewayError)) {
          throw err;
        }
        this.update(setConnection(this.model, "unreachable"));
      }
      if (!this.stopped) {
        await sleep(this.retryDelayMs);
      }
    }
  }

  /** One connection attempt: snapshot, then stream until it ends. */
  async openOnce(): Promise<void> {
    const status = await this.gateway.status();
    const alerts = await this.gateway.alerts();
    this.update(applySnapshot(initialModel(), status, alerts));
    this.abort = new AbortController();
    await this.gateway.streamEvents(
      (frame) => this.handleFrame(frame), this.abort.signal);
    if (!this.stopped) {
      this.update(setConnection(this.model, "unreachable"));
    }
  }

  handleFrame(frame: GatewayFrame): void {
    this.update(applyFrame(this.model, frame));
  }

  stop(): void {
    this.stopped = true;
    this.abort.abort();
  }

  // -- device panel -------------------------------------------------------

  selectDevice(pointId: string | null): void {
    const reserved = pointId !== null && this.reservations.has(pointId);
    this.update(selectDevice(this.model, pointId, reserved));
  }

  /** True when this operator may command the resource (client-side gate;
   * the gateway enforces the same rule server-side regardless). */
  controlsEnabled(resource: string): boolean {
    return this.reservations.has(resource);
  }

  async reserve(resource: string): Promise<CommandAck> {
    const { body } = await this.gateway.reserve(resource, this.operatorId);
    if (body.ok) {
      this.reservations.add(resource);
    }
    this.renderAck("reserve", body);
    this.refreshSelectedReservation(resource);
    return body;
  }

  async release(resource: string): Promise<CommandAck> {
    const { body } = await this.gateway.reserve(resource, this.operatorId,
                                                "release");
    if (body.ok) {
      this.reservations.delete(resource);
    }
    this.renderAck("release", body);
    this.refreshSelectedReservation(resource);
    return body;
  }

  private refreshSelectedReservation(resource: string): void {
    if (this.model.selected?.pointId === resource) {
      const next = structuredClone(this.model);
      next.selected!.reserved = this.reservations.has(resource);
      this.update(next);
    }
  }

  /**
   * Issue a device command. The UI keeps controls disabled without a
   * reservation; `force` skips that gate (test mode) so the server's own
   * rejection is exercised and rendered.
   */
  async issueCommand(pointId: string, op: string,
                     args: Record<string, unknown>,
                     force = false): Promise<CommandAck> {
    if (!force && !this.controlsEnabled(pointId)) {
      const ack: CommandAck = {
        ok: false, error: "ControlsDisabled",
        reason: `reserve ${pointId} before commanding it`,
      };
      this.renderAck(op, ack);
      return ack;
    }
    const { body } = await this.gateway.command(pointId, op, args,
                                                this.operatorId);
    this.renderAck(op, body);
    return body;
  }

  /** Hold/resume go straight out; abort requires explicit confirmation. */
  async shotControl(op: "hold" | "resume" | "abort", reason: string,
                    confirmed = false): Promise<CommandAck> {
    if (op === "abort" && !confirmed) {
      const ack: CommandAck = {
        ok: false, error: "ConfirmationRequired",
        reason: "abort needs operator confirmation",
      };
      this.renderAck(op, ack);
      return ack;
    }
    const { body } = await this.gateway.shotControl(op, reason,
                                                    this.operatorId);
    this.renderAck(op, body);
    return body;
  }

  private renderAck(op: string, ack: CommandAck): void {
    this.update(setAck(this.model, {
      op, ok: ack.ok, error: ack.error, reason: ack.reason,
    }));
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
