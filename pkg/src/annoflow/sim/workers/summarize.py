"""Worker: publish a JSON summary of the annotations produced upstream."""
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
    rows = host.call("get_input_annotations", {})["annotations"]
    per_image: Counter[str] = Counter(row["image_ref"] for row in rows)
    summary = {
        "annotations": len(rows),
        "images": len(per_image),
        "max_per_image": max(per_image.values(), default=0),
    }
    fd, path = tempfile.mkstemp(prefix="summary-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        host.call("add_data_export", {"path": path})
    finally:
        os.unlink(path)
    host.finish(message=f"summarized {len(rows)} annotations")


if __name__ == "__main__":
    main()
