/** Gateway client: JSON endpoints plus the server-push event stream.
 *
 * The event stream is read with fetch streaming rather than EventSource so
 * the same code runs in the browser and under node for tests.
 */

import type { AlertsSnapshot, CommandAck, GatewayFrame, StatusSnapshot } from "./types.js";

export class GatewayError extends Error {
  constructor(message: string, readonly status: number = 0) {
    super(message);
  }
}

export class GatewayClient {
  constructor(readonly baseUrl: string,
              private readonly fetchFn: typeof fetch = fetch) {}

  private async getJson<T>(path: string): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.baseUrl}${path}`);
    } catch (err) {
      throw new GatewayError(`gateway unreachable: ${err}`);
    }
    if (!resp.ok) {
      throw new GatewayError(`${path}: HTTP ${resp.status}`, resp.status);
    }
    return (await resp.json()) as T;
  }

  async postJson<T>(path: string, body: unknown): Promise<{ status: number; body: T }> {
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.baseUrl}${path}`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      });
    } catch (err) {
      throw new GatewayError(`gateway unreachable: ${err}`);
    }
    return { status: resp.status, body: (await resp.json()) as T };
  }

  status(): Promise<StatusSnapshot> {
    return this.getJson<StatusSnapshot>("/status");
  }

  alerts(): Promise<AlertsSnapshot> {
    return this.getJson<AlertsSnapshot>("/alerts");
  }

  command(pointId: string, op: string, args: Record<string, unknown>,
          operator: string): Promise<{ status: number; body: CommandAck }> {
    return this.postJson<CommandAck>("/command",
      { point_id: pointId, op, args, operator });
  }

  reserve(resource: string, holder: string,
          action: "acquire" | "release" = "acquire"):
      Promise<{ status: number; body: CommandAck }> {
    return this.postJson<CommandAck>("/reserve", { resource, holder, action });
  }

  shotControl(op: "hold" | "resume" | "abort", reason: string,
              operator: string): Promise<{ status: number; body: CommandAck }> {
    return this.postJson<CommandAck>(`/shot/${op}`, { reason, operator });
  }

  videoUrl(cameraId: string): string {
    return `${this.baseUrl}/video/${cameraId}`;
  }

  /**
   * Consume the event stream, invoking onFrame for each parsed frame in
   * arrival order. Resolves when the stream ends; rejects on connect
   * failure. Abort via the signal to stop.
   */
  async streamEvents(onFrame: (frame: GatewayFrame) => void,
                     signal?: AbortSignal): Promise<void> {
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.baseUrl}/events`, { signal });
    } catch (err) {
      throw new GatewayError(`gateway unreachable: ${err}`);
    }
    if (!resp.ok || resp.body === null) {
      throw new GatewayError(`/events: HTTP ${resp.status}`, resp.status);
    }
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    try {
      for (;;) {
        const { done, value } = await reader.read();
        if (done) {
          return;
        }
        buffer += decoder.decode(value, { stream: true });
        buffer = drainFrames(buffer, onFrame);
      }
    } finally {
      reader.releaseLock();
    }
  }
}

/** Parse complete "event:/data:" blocks out of the buffer; returns the
 * unconsumed remainder. Malformed payloads are skipped. */
export function drainFrames(buffer: string,
                            onFrame: (frame: GatewayFrame) => void): string {
  for (;;) {
    const split = buffer.indexOf("\n\n");
    if (split < 0) {
      return buffer;
    }
    const block = buffer.slice(0, split);
    buffer = buffer.slice(split + 2);
    let kind = "";
    let data = "";
    for (const line of block.split("\n")) {
      if (line.startsWith("event: ")) {
        kind = line.slice("event: ".length).trim();
      } else if (line.startsWith("data: ")) {
        data = line.slice("data: ".length);
      }
    }
    if (!kind || !data) {
      continue; // keepalive comment or partial block
    }
    try {
      onFrame({ kind: kind as GatewayFrame["kind"], data: JSON.parse(data) });
    } catch {
      // malformed frame: skipped, view stays unchanged
    }
  }
}
