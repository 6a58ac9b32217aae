"""File formats: JSONL records, CSV reports, and JSON model checkpoints.

Floats are serialized as decimal with 17 significant digits, which is
enough for a bit-exact double round-trip.  Negative infinity (a legal
lattice entry) is written as the JSON-extension literal -Infinity, which
the standard json parser accepts.
"""

from __future__ import annotations

import csv
import json
import math
from typing import Any, Iterable, Iterator

import numpy as np

from .errors import FormatError, ValidationError
from .lattice import ActionPath, Lattice

FLOAT_DIGITS = 17


def format_float(x: float) -> str:
    if math.isnan(x):
        raise ValidationError("NaN is not serializable")
    if math.isinf(x):
        return "-Infinity" if x < 0 else "Infinity"
    return format(x, f".{FLOAT_DIGITS}g")


def _render(value: Any) -> str:
    """JSON rendering with explicit float formatting."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, np.ndarray):
        return _render(value.tolist())
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_render(v) for v in value) + "]"
    if isinstance(value, dict):
        items = (f"{json.dumps(str(k))}: {_render(v)}" for k, v in value.items())
        return "{" + ", ".join(items) + "}"
    raise ValidationError(f"cannot serialize {type(value).__name__}")


def dump_json_line(record: dict) -> str:
    return _render(record)


def write_jsonl(path: str, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(dump_json_line(record) + "\n")


def read_jsonl(path: str) -> Iterator[tuple[int, dict]]:
    """Yield (1-based line number, record); malformed lines carry their number."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON ({exc.msg})", line=lineno) from exc
            if not isinstance(record, dict):
                raise FormatError("record is not an object", line=lineno)
            yield lineno, record


# ---------------------------------------------------------------------------
# Lattice records: {"T", "U", "vocab_size", "logits"} with logits[i][j][k]
# and k ordered real-tokens-then-blank.
# ---------------------------------------------------------------------------


def lattice_record(lattice: Lattice) -> dict:
    return {
        "T": lattice.num_decisions,
        "U": lattice.target_len,
        "vocab_size": lattice.vocab_size,
        "logits": lattice.logits,
    }


def parse_lattice_record(record: dict, lineno: int | None = None) -> Lattice:
    try:
        T, U, vocab = int(record["T"]), int(record["U"]), int(record["vocab_size"])
        logits = np.array(record["logits"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad lattice record: {exc}", line=lineno) from exc
    if logits.shape != (T + 1, U + 1, vocab + 1):
        raise FormatError(
            f"logits shape {logits.shape} != ({T + 1}, {U + 1}, {vocab + 1})",
            line=lineno,
        )
    return Lattice(logits)


def read_lattice_jsonl(path: str) -> list[Lattice]:
    return [parse_lattice_record(rec, lineno) for lineno, rec in read_jsonl(path)]


def write_lattice_jsonl(path: str, lattices: Iterable[Lattice]) -> None:
    write_jsonl(path, (lattice_record(lat) for lat in lattices))


# ---------------------------------------------------------------------------
# Token / delay / path records.
# ---------------------------------------------------------------------------


def parse_tokens_record(record: dict, lineno: int | None = None) -> tuple[int, ...]:
    try:
        tokens = tuple(int(t) for t in record["tokens"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad tokens record: {exc}", line=lineno) from exc
    return tokens


def path_record(path: ActionPath, src_len: int) -> dict:
    return {"actions": path.actions, "tokens": list(path.tokens), "src_len": src_len}


def parse_path_record(record: dict, lineno: int | None = None) -> tuple[ActionPath, int]:
    try:
        path = ActionPath(
            actions=str(record["actions"]),
            tokens=tuple(int(t) for t in record["tokens"]),
        )
        src_len = int(record["src_len"])
    except (KeyError, TypeError, ValueError, ValidationError) as exc:
        raise FormatError(f"bad path record: {exc}", line=lineno) from exc
    return path, src_len


def delay_record(src_len: int, tgt_len: int, delays: Iterable[float]) -> dict:
    return {"src_len": src_len, "tgt_len": tgt_len, "delays": list(delays)}


def parse_delay_record(record: dict, lineno: int | None = None) -> tuple[int, int, list[float]]:
    try:
        return (
            int(record["src_len"]),
            int(record["tgt_len"]),
            [float(g) for g in record["delays"]],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad delay record: {exc}", line=lineno) from exc


# ---------------------------------------------------------------------------
# CSV reports.  Floats use repr (shortest round-trip) so identical runs
# produce byte-identical files.
# ---------------------------------------------------------------------------


def _csv_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: str, header: list[str], rows: Iterable[Iterable[Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_csv_cell(v) for v in row])


# ---------------------------------------------------------------------------
# Model checkpoints: JSON object with a version header and parameter arrays.
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = 1


def write_checkpoint(path: str, version: str, config: dict, params: dict[str, np.ndarray]) -> None:
    record = {
        "format": CHECKPOINT_FORMAT,
        "tool_version": version,
        "config": config,
        "params": {name: params[name] for name in sorted(params)},
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_render(record) + "\n")


def read_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            record = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid checkpoint JSON ({exc.msg})") from exc
    if record.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"unsupported checkpoint format {record.get('format')!r}")
    params = {
        name: np.array(values, dtype=np.float64)
        for name, values in record["params"].items()
    }
    return record["config"], params
