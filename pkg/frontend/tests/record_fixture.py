"""Regenerate recorded_session.json from a live gateway.

Runs a mini-profile facility in wall mode, opens the real /events stream,
raises alerts, injects a fault, runs a countdown with one hold, and stores
the snapshot plus every received frame. Run from the repo root:

    python3 frontend/tests/record_fixture.py
"""

import http.client
import json
import sys
import threading
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "tests"))

from conftest import mini_plan  # noqa: E402
from iccs.harness.config import mini_profile  # noqa: E402
from iccs.harness.facility import launch  # noqa: E402
from iccs.harness.gateway import Gateway  # noqa: E402
from iccs.harness.script import ScriptRunner  # noqa: E402

OUT = Path(__file__).parent / "fixtures" / "recorded_session.json"


def main() -> None:
    facility = launch(mini_profile(), mode="wall")
    gateway = Gateway(facility, port=0)
    try:
        conn = http.client.HTTPConnection("127.0.0.1", gateway.port,
                                          timeout=15.0)
        conn.request("GET", "/events")
        stream = conn.getresponse()

        snap = http.client.HTTPConnection("127.0.0.1", gateway.port,
                                          timeout=5.0)
        snap.request("GET", "/status")
        status = json.loads(snap.getresponse().read())
        snap.request("GET", "/alerts")
        alerts = json.loads(snap.getresponse().read())
        snap.close()

        facility.services.alerts.raise_alert("fep/b01", "warning",
                                             "amp temp high")
        time.sleep(0.1)
        facility.services.alerts.raise_alert("sup/power", "critical",
                                             "capacitor fault")
        time.sleep(0.1)
        facility.inject_fault("b01/diag/pd000", "sensor dropout")
        time.sleep(0.2)
        facility.clear_fault("b01/diag/pd000")

        facility.director.load_plan(mini_plan())
        runner = threading.Thread(
            target=ScriptRunner(facility).run_text,
            args=("hold_at 3.0 0.6\ncountdown\n",), daemon=True)
        runner.start()
        runner.join(timeout=30.0)
        time.sleep(0.3)

        buf = b""
        stream.fp.raw._sock.settimeout(0.5)
        deadline = time.monotonic() + 3.0
        while time.monotonic() < deadline:
            try:
                chunk = stream.fp.read1(65536)
            except Exception:
                break
            if not chunk:
                break
            buf += chunk
        conn.close()

        frames = []
        kind = None
        for line in buf.decode().split("\n"):
            if line.startswith("event: "):
                kind = line[len("event: "):].strip()
            elif line.startswith("data: ") and kind:
                frames.append({"kind": kind,
                               "data": json.loads(line[len("data: "):])})
                kind = None

        OUT.parent.mkdir(parents=True, exist_ok=True)
        OUT.write_text(json.dumps(
            {"status": status, "alerts": alerts, "frames": frames}, indent=1),
            encoding="utf-8")
        kinds: dict[str, int] = {}
        for frame in frames:
            kinds[frame["kind"]] = kinds.get(frame["kind"], 0) + 1
        held = sum(1 for f in frames
                   if f["kind"] == "tick" and f["data"]["phase"] == "held")
        print(f"recorded {len(frames)} frames: {kinds}, {held} held ticks, "
              f"outcome {facility.director.last_result.outcome}")
    finally:
        gateway.close()
        facility.shutdown()


if __name__ == "__main__":
    main()
