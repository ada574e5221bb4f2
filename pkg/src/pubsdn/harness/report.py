"""Report serialization."""
from __future__ import annotations

import csv
import io
import json


def emit_report(report: dict, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(report, sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        return _csv(report)
    raise ValueError(f"unknown report format {fmt!r}")


def _csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["table", "id", "delivered", "overflow_drops"])
    for rid, r in sorted(report.get("readers", {}).items()):
        w.writerow(["reader", rid, r["delivered"], r["overflow_drops"]])
    w.writerow([])
    w.writerow(["table", "id", "received", "forwarded", "to_controller", "dropped",
                "packet_outs", "packets", "bytes"])
    for sid, s in sorted(report.get("switches", {}).items()):
        w.writerow(["switch", sid, s["received"], s["forwarded"], s["to_controller"],
                    s["dropped"], s["packet_outs"], s["packets"], s["bytes"]])
    w.writerow([])
    w.writerow(["table", "metric", "value"])
    for key in ("events_dispatched", "network_packets", "stale_deliveries", "unclaimed",
                "slice_violations", "trace_hash"):
        w.writerow(["summary", key, report.get(key, 0)])
    for proto, n in sorted(report.get("packet_in", {}).items()):
        w.writerow(["summary", f"packet_in.{proto}", n])
    w.writerow(["summary", "alerts", len(report.get("alerts", []))])
    return buf.getvalue()
