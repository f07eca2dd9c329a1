/** View-model replay: the console view is a pure function of
 * (snapshot + ordered frames). */

import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import type { AlertsSnapshot, GatewayFrame, StatusSnapshot, ViewModel } from "../src/types.js";
import {
  applyFrame,
  applySnapshot,
  formatTMinus,
  initialModel,
} from "../src/viewmodel.js";

interface Recorded {
  status: StatusSnapshot;
  alerts: AlertsSnapshot;
  frames: GatewayFrame[];
}

const recorded: Recorded = JSON.parse(readFileSync(
  new URL("./fixtures/recorded_session.json", import.meta.url), "utf-8"));

function replay(): ViewModel {
  let model = applySnapshot(initialModel(), recorded.status, recorded.alerts);
  for (const frame of recorded.frames) {
    model = applyFrame(model, frame);
  }
  return model;
}

describe("recorded session replay", () => {
  it("ends at the expected view", () => {
    const model = replay();
    // the recorded shot completed; the last phase frame is post_shot
    expect(model.countdown.phase).toBe("post_shot");
    expect(model.countdown.shotId).toBe("shot-0001");
    // alert panel: critical first, then the older warning; both active
    expect(model.alerts.map((a) => a.severity)).toEqual(
      ["critical", "warning"]);
    expect(model.alerts[0].text).toBe("capacitor fault");
    expect(model.audibleCue).toBe(true);
    // the injected fault was cleared, so the board is healthy again
    expect(model.ready).toBe(true);
    expect(Object.values(model.board).every((s) => s.health !== "fault"))
      .toBe(true);
    // every recorded frame parsed cleanly
    expect(model.notices).toEqual([]);
  });

  it("is replay-deterministic", () => {
    expect(replay()).toEqual(replay());
  });

  it("shows held ticks frozen at one t_minus", () => {
    let model = applySnapshot(initialModel(), recorded.status, recorded.alerts);
    const heldDisplays = new Set<string>();
    for (const frame of recorded.frames) {
      model = applyFrame(model, frame);
      if (frame.kind === "tick" && model.countdown.phase === "held") {
        heldDisplays.add(model.countdown.display);
      }
    }
    expect(heldDisplays.size).toBe(1);
  });

  it("keeps countdown display non-increasing while counting", () => {
    let model = applySnapshot(initialModel(), recorded.status, recorded.alerts);
    let last = Number.POSITIVE_INFINITY;
    for (const frame of recorded.frames) {
      model = applyFrame(model, frame);
      if (frame.kind === "tick") {
        expect(model.countdown.tMinusS).toBeLessThanOrEqual(last);
        last = model.countdown.tMinusS;
      }
    }
    expect(last).toBe(0);
  });
});

describe("countdown formatting", () => {
  it("renders tick t_minus as MM:SS.d", () => {
    expect(formatTMinus(4.0)).toBe("00:04.0");
    expect(formatTMinus(59.9)).toBe("00:59.9");
    expect(formatTMinus(60.0)).toBe("01:00.0");
    expect(formatTMinus(125.3)).toBe("02:05.3");
    expect(formatTMinus(0)).toBe("00:00.0");
    expect(formatTMinus(-2)).toBe("00:00.0");
  });
});

describe("alert panel ordering", () => {
  function alertFrame(id: string, severity: string, raisedNs: number,
                      state = "raised"): GatewayFrame {
    return {
      kind: "alert",
      data: { alert_id: id, source: "s", severity, text: id, state,
              raised_ns: raisedNs, raised_at: "t" },
    };
  }

  it("orders severity desc then raised time asc after any interleaving", () => {
    const frames = [
      alertFrame("a-info", "info", 5),
      alertFrame("a-crit-new", "critical", 30),
      alertFrame("a-warn", "warning", 10),
      alertFrame("a-crit-old", "critical", 20),
      alertFrame("a-serious", "serious", 1),
    ];
    // a few different arrival orders must converge to the same panel
    for (const order of [[0, 1, 2, 3, 4], [4, 3, 2, 1, 0], [2, 0, 4, 1, 3]]) {
      let model = initialModel();
      for (const index of order) {
        model = applyFrame(model, frames[index]);
      }
      expect(model.alerts.map((a) => a.alertId)).toEqual(
        ["a-crit-old", "a-crit-new", "a-serious", "a-warn", "a-info"]);
    }
  });

  it("drops cleared alerts and keeps acknowledged ones dimmed", () => {
    let model = initialModel();
    model = applyFrame(model, alertFrame("x", "serious", 1));
    model = applyFrame(model, alertFrame("y", "warning", 2));
    model = applyFrame(model, alertFrame("x", "serious", 1, "acknowledged"));
    expect(model.alerts.find((a) => a.alertId === "x")?.state)
      .toBe("acknowledged");
    model = applyFrame(model, alertFrame("x", "serious", 1, "cleared"));
    expect(model.alerts.map((a) => a.alertId)).toEqual(["y"]);
  });
});

describe("frame robustness", () => {
  it("skips malformed frames and logs a notice", () => {
    const model = initialModel();
    const next = applyFrame(model, { kind: "tick", data: { nope: 1 } });
    expect(next.notices.length).toBe(1);
    expect(next.countdown).toEqual(model.countdown);
  });

  it("status frames for unselected devices leave the panel untouched", () => {
    const model = initialModel();
    const next = applyFrame(model, {
      kind: "status",
      data: { point_id: "b01/align/mx", value: 5, health: "ok" },
    });
    expect(next.selected).toBeNull();
  });

  it("hold phase frames carry the reason into the banner", () => {
    let model = initialModel();
    model = applyFrame(model, {
      kind: "phase",
      data: { phase: "held", shot_id: "s", reason: "operator check" },
    });
    expect(model.countdown.holdReason).toBe("operator check");
    model = applyFrame(model, {
      kind: "phase", data: { phase: "counting", shot_id: "s" },
    });
    expect(model.countdown.holdReason).toBe("");
  });
});
