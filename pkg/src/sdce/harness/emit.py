"""Result rows and their CSV, JSON-lines and aligned-text encodings."""
from __future__ import annotations

import csv
import io
import json
import math
import os

SCHEMA_VERSION = 1
COLUMNS = ("run_id", "seed", "policy", "generation", "rho", "quality_rel", "w2_drift",
           "w_prod", "w_cons", "l_coll", "l_info", "welfare_total", "residual", "schema_version")
INT_COLUMNS = ("seed", "generation", "schema_version")
STR_COLUMNS = ("run_id", "policy")


class EmitError(OSError):
    pass


def record_rows(record, run_id: str) -> list[dict]:
    """Flatten a run record into one row per generation."""
    rows = []
    for r in record.rows:
        w = r.welfare
        rows.append({
            "run_id": run_id,
            "seed": int(record.seed),
            "policy": record.policy,
            "generation": int(r.generation),
            "rho": r.rho,
            "quality_rel": r.quality_rel,
            "w2_drift": r.w2_drift,
            "w_prod": w.producer_surplus,
            "w_cons": w.consumer_surplus,
            "l_coll": w.collapse_loss,
            "l_info": w.info_loss,
            "welfare_total": w.total,
            "residual": r.residual,
            "schema_version": SCHEMA_VERSION,
        })
    return rows


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def _cell(col, v):
    if col in STR_COLUMNS or col in INT_COLUMNS:
        return str(v)
    return fmt_float(v)


def csv_text(rows, header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(COLUMNS)
    for row in rows:
        w.writerow([_cell(c, row[c]) for c in COLUMNS])
    return buf.getvalue()


def parse_row(raw: dict) -> dict:
    out = {}
    for c in COLUMNS:
        if c not in raw:
            raise ValueError(f"missing column {c}")
        v = raw[c]
        out[c] = v if c in STR_COLUMNS else int(v) if c in INT_COLUMNS else float(v)
    if out["schema_version"] != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {out['schema_version']}")
    return out


def _write(path: str, text: str, mode: str = "w") -> None:
    try:
        d = os.path.dirname(path)
        if d:
            os.makedirs(d, exist_ok=True)
        with open(path, mode, newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise EmitError(f"{path}: {exc.strerror or exc}") from exc


def write_csv(rows, path: str) -> None:
    _write(path, csv_text(rows))


def read_csv(path: str) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            return [parse_row(r) for r in csv.DictReader(fh)]
    except OSError as exc:
        raise EmitError(f"{path}: {exc.strerror or exc}") from exc


def jsonl_text(rows) -> str:
    def enc(row):
        d = {c: row[c] for c in COLUMNS}
        for c in COLUMNS:
            if c not in STR_COLUMNS and c not in INT_COLUMNS and not math.isfinite(d[c]):
                d[c] = fmt_float(d[c])  # JSON has no inf/nan literals
        return json.dumps(d)

    return "".join(enc(r) + "\n" for r in rows)


def write_jsonl(rows, path: str) -> None:
    _write(path, jsonl_text(rows))


def read_jsonl(path: str) -> list[dict]:
    try:
        with open(path) as fh:
            return [parse_row(json.loads(ln)) for ln in fh if ln.strip()]
    except OSError as exc:
        raise EmitError(f"{path}: {exc.strerror or exc}") from exc


def aligned_table(header, body, floatfmt: str = ".4f") -> str:
    """Right-aligned columns separated by two spaces."""
    cells = [[str(h) for h in header]]
    for row in body:
        cells.append([format(v, floatfmt) if isinstance(v, float) else str(v) for v in row])
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells) + "\n"


def text_of_rows(rows) -> str:
    cols = [c for c in COLUMNS if c != "schema_version"]
    return aligned_table(cols, [[r[c] for c in cols] for r in rows])


def write_text(rows, path: str) -> None:
    _write(path, text_of_rows(rows))


WRITERS = {"csv": (write_csv, "csv"), "jsonl": (write_jsonl, "jsonl"), "text": (write_text, "txt")}


def emit(rows, directory: str, stem: str, fmt: str = "csv") -> str:
    if not rows:
        raise ValueError("nothing to emit")
    if fmt not in WRITERS:
        raise ValueError(f"unknown format {fmt!r}")
    writer, ext = WRITERS[fmt]
    path = os.path.join(directory, f"{stem}.{ext}")
    writer(rows, path)
    return path
