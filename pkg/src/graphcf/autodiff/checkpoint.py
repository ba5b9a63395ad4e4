"""Named-tensor checkpoints as line-delimited JSON.

Line 1 is a header ``{"format": "graphcf-tensors", "version": 1, "meta": {...}}``;
every further line is ``{"name", "shape", "values"}`` with row-major values.
Floats go through ``repr`` so the round trip is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "graphcf-tensors"
VERSION = 1


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": FORMAT, "version": VERSION, "meta": meta or {}}, sort_keys=True) + "\n")
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype=np.float64)
            rec = {"name": name, "shape": list(arr.shape), "values": [float(v) for v in arr.reshape(-1)]}
            fh.write(json.dumps(rec) + "\n")


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    out: dict[str, np.ndarray] = {}
    with path.open("r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line:
            raise ValueError(f"{path}: empty checkpoint")
        header = json.loads(header_line)
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} file")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                arr = np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"])
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad tensor record ({exc})") from exc
            out[rec["name"]] = arr
    return out, header.get("meta", {})
