"""Fixed-schema metrics files: JSON lines for training, CSV for evaluation and sweeps."""
from __future__ import annotations

import csv
import json
from pathlib import Path


class SchemaError(ValueError):
    pass


TRAIN_FIELDS = {"episode": int, "mean_reward": float, "actor_loss": float, "critic_loss": float,
                "entropy": float, "clip_fraction": float, "energy_J": float, "completion_step": int}
DQN_TRAIN_FIELDS = {"episode": int, "mean_reward": float, "td_loss": float, "epsilon": float,
                    "energy_J": float, "completion_step": int}
EVAL_COLUMNS = {"policy": str, "seed": int, "episode": int, "energy_J": float,
                "completion_step": int, "violations": int, "completed": int}
SWEEP_COLUMNS = {"k": int, "policy": str, "mean_energy_J": float, "std_energy_J": float,
                 "completion_rate": float}


def _check_row(row: dict, schema: dict, where: str) -> dict:
    if set(row) != set(schema):
        raise SchemaError(f"{where}: fields {sorted(row)} != {sorted(schema)}")
    out = {}
    for key, typ in schema.items():
        value = row[key]
        try:
            if typ is int:
                if isinstance(value, bool) or float(value) != int(float(value)):
                    raise ValueError
                value = int(float(value))
            elif typ is float:
                value = float(value)
            else:
                value = str(value)
        except (TypeError, ValueError):
            raise SchemaError(f"{where}: {key}={value!r} is not {typ.__name__}") from None
        out[key] = value
    return out


def jsonl_line(row: dict, schema: dict) -> str:
    return json.dumps(_check_row(row, schema, "jsonl row"), sort_keys=True) + "\n"


def read_jsonl(path: str | Path, schema: dict = TRAIN_FIELDS) -> list[dict]:
    rows = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                rows.append(_check_row(json.loads(line), schema, f"{path}:{n}"))
    return rows


def write_csv(path: str | Path, rows: list[dict], columns: dict) -> None:
    checked = [_check_row(r, columns, f"{path} row {n}") for n, r in enumerate(rows, 1)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(columns))
        for r in checked:
            w.writerow([repr(r[c]) if columns[c] is float else r[c] for c in columns])
    # read-back check
    read_csv(path, columns)


def read_csv(path: str | Path, columns: dict) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(columns):
            raise SchemaError(f"{path}: header {header} != {list(columns)}")
        return [_check_row(dict(zip(header, r)), columns, f"{path} line {n}")
                for n, r in enumerate(reader, 2)]
