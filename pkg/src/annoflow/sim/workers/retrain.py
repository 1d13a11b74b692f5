"""Worker: stand-in model update step at the end of a loop round.

Aggregates everything labeled so far into a small JSON state file and
registers it as an export.  A real deployment would fine-tune a detector
here; the pipeline contract only needs the step to consume its inputs and
finish.
"""
from __future__ import annotations

import json
import os
import sys
import tempfile
from collections import Counter
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from _proto import Host


def main() -> None:
    host = Host()
    host.call("report_progress", {"progress": 0.25})
    rows = host.call("get_input_annotations", {})["annotations"]
    by_label: Counter[str] = Counter()
    for row in rows:
        for label in row["labels"]:
            by_label[label] += 1
    state = {
        "round": host.iteration,
        "boxes_seen": len(rows),
        "per_label": dict(sorted(by_label.items())),
    }
    fd, path = tempfile.mkstemp(prefix="model-state-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(state, fh, indent=2, sort_keys=True)
        host.call("add_data_export", {"path": path})
    finally:
        os.unlink(path)
    host.call("report_progress", {"progress": 1.0})
    host.finish(message=f"round {host.iteration}: updated on {len(rows)} boxes")


if __name__ == "__main__":
    main()
