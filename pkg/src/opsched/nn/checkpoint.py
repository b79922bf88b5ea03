"""Textual parameter checkpoints: a versioned header plus (name, shape, values) triples."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "opsched-params"
VERSION = 1


def dump_params(state, extra: dict | None = None) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "extra": extra or {},
        "params": [{"name": k, "shape": list(np.shape(v)), "values": np.asarray(v, dtype=np.float64).ravel().tolist()}
                   for k, v in state.items()],
    }


def save_params(path, state, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(dump_params(state, extra)), encoding="utf-8")


def parse_params(doc: dict):
    if doc.get("format") != FORMAT:
        raise ValueError("not a parameter checkpoint")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    state = {}
    for entry in doc["params"]:
        state[entry["name"]] = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
    return state, doc.get("extra", {})


def load_params(path):
    return parse_params(json.loads(Path(path).read_text(encoding="utf-8")))
