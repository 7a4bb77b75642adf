"""
Serialization helpers: checkpoint codec, report dicts, deterministic JSON/CSV writers.

Checkpoint layout (JSON text):

    {
      "format": "lightn-checkpoint",
      "version": 1,
      "kind": "lightn_sampler" | "task_head",
      "meta": {...},
      "blocks": {"<name>": {"shape": [rows, cols], "data": [row-major floats]}}
    }

Floats are written with Python's shortest round-trip repr, so a save/load
cycle reproduces every float64 bit.
"""
import csv
import json
import os
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from errors import ContractError

CHECKPOINT_FORMAT = "lightn-checkpoint"
CHECKPOINT_VERSION = 1


def _ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def dumps(obj: Any) -> str:
    """Canonical JSON text: sorted keys, fixed indent, trailing newline"""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: str, obj: Any):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def format_value(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def blocks_to_dict(blocks: Dict[str, np.ndarray]) -> Dict[str, Dict[str, Any]]:
    return {
        name: {"shape": list(value.shape), "data": [float(x) for x in np.asarray(value).ravel()]}
        for name, value in blocks.items()
    }


def blocks_from_dict(payload: Dict[str, Dict[str, Any]]) -> Dict[str, np.ndarray]:
    blocks = {}
    for name, entry in payload.items():
        shape = tuple(int(s) for s in entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise ContractError(f"checkpoint block '{name}' has {data.size} values for shape {shape}")
        blocks[name] = data.reshape(shape)
    return blocks


def save_checkpoint(path: str, kind: str, blocks: Dict[str, np.ndarray], meta: Dict[str, Any]):
    write_json(path, {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "meta": meta,
        "blocks": blocks_to_dict(blocks),
    })


def load_checkpoint(path: str, kind: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    doc = read_json(path)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    if doc.get("kind") != kind:
        raise ContractError(f"{path} holds a '{doc.get('kind')}' checkpoint, expected '{kind}'")
    return blocks_from_dict(doc["blocks"]), doc.get("meta", {})


def cost_report_to_dict(report) -> Dict[str, Any]:
    return report.model_dump(mode="json")


def budget_to_dict(result) -> Dict[str, Any]:
    return {
        "ok": result.ok,
        "flops_ok": result.flops_ok,
        "params_ok": result.params_ok,
        "flops_margin": str(result.flops_margin),
        "reduction_pct": float(result.flops_margin * 100),
        "params_increase": str(result.params_increase),
        "increase_pct": float(result.params_increase * 100),
    }


def metrics_to_dict(metrics) -> Dict[str, Any]:
    return metrics.model_dump(mode="json")


def cloud_to_list(cloud: np.ndarray) -> List[List[float]]:
    return [[float(v) for v in row] for row in np.asarray(cloud)]
