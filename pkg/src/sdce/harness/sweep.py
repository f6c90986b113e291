"""Seeded sweeps over (rho, regime, policy, seed) cells with a resumable manifest.

Random streams: the run for a cell draws from
``SeedSequence([seed, rho_index])``, where ``rho_index`` is the position of
the cell's contamination value on the rho axis. Cells that differ only in
regime or policy therefore share random numbers, which pairs comparisons.

Rows are appended to ``results.partial.csv`` as each cell completes; the
final output is rewritten sorted by run_id, so it does not depend on the
completion order. Timestamps live only in ``manifest.json``.
"""
from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Optional

from sdce.harness.config import ExperimentConfig
from sdce.harness.emit import COLUMNS, csv_text, emit, parse_row, record_rows
from sdce.pmir import ConfigError, Regime, pmir_run
from sdce.welfare import PolicyKind

MANIFEST = "manifest.json"
PARTIAL = "results.partial.csv"


@dataclass(frozen=True)
class Cell:
    ordinal: int
    rho_index: int
    rho: Optional[float]
    regime: str
    policy: str
    seed: int

    @property
    def run_id(self) -> str:
        tag = "endo" if self.rho is None else f"r{self.rho:.3f}"
        return f"{self.ordinal:05d}-{tag}-{self.regime}-{self.policy}-s{self.seed}"


def sweep_cells(cfg: ExperimentConfig) -> list[Cell]:
    ax = cfg.sweep
    cells = []
    grid = itertools.product(enumerate(ax.rho_values), ax.regimes, ax.policies, ax.seeds)
    for n, ((ri, rho), regime, policy, seed) in enumerate(grid):
        cells.append(Cell(n, ri, rho, Regime(regime).value, PolicyKind(policy).value, int(seed)))
    return cells


def run_cell(cfg: ExperimentConfig, cell: Cell):
    pc = dataclasses.replace(cfg.pmir, seed=cell.seed, stream=cell.rho_index, forced_rho=cell.rho)
    policy = dataclasses.replace(cfg.policy, kind=PolicyKind(cell.policy))
    return pmir_run(pc, cfg.schedule, policy, Regime(cell.regime))


def _cell_rows(cfg: ExperimentConfig, cell: Cell) -> list[dict]:
    return record_rows(run_cell(cfg, cell), cell.run_id)


def _load_manifest(path: str, fp: str) -> dict:
    if not os.path.exists(path):
        return {"fingerprint": fp, "cells": {}}
    with open(path) as fh:
        man = json.load(fh)
    if man.get("fingerprint") != fp:
        raise ConfigError(f"{os.path.dirname(path) or '.'} holds results of a different configuration")
    return man


def _save_manifest(path: str, man: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(man, fh, indent=1, sort_keys=True)
    os.replace(tmp, path)


def _read_partial(path: str, done: set) -> list[dict]:
    if not os.path.exists(path):
        return []
    with open(path, newline="") as fh:
        rows = [parse_row(dict(zip(COLUMNS, r))) for r in csv.reader(fh) if r]
    return [r for r in rows if r["run_id"] in done]


@dataclass
class SweepResult:
    rows: list
    output: str
    failed: dict
    skipped: int


def run_sweep(cfg: ExperimentConfig, out_dir: Optional[str] = None, workers: int = 1,
              fmt: Optional[str] = None, progress=None) -> SweepResult:
    out_dir = out_dir or cfg.output_dir
    fmt = fmt or cfg.output_format
    os.makedirs(out_dir, exist_ok=True)
    man_path = os.path.join(out_dir, MANIFEST)
    part_path = os.path.join(out_dir, PARTIAL)
    man = _load_manifest(man_path, cfg.fingerprint)
    man["host"] = platform.node()
    cells = sweep_cells(cfg)
    done = {rid for rid, c in man["cells"].items() if c.get("status") == "done"}
    rows = _read_partial(part_path, done)
    # rewrite the partial file so rows of interrupted cells do not linger
    with open(part_path, "w", newline="") as fh:
        fh.write(csv_text(rows, header=False))
    todo = [c for c in cells if c.run_id not in done]
    failed = {}

    def finish(cell, cell_rows=None, error=None):
        entry = man["cells"].setdefault(cell.run_id, {})
        entry["finished"] = time.time()
        if error is None:
            with open(part_path, "a", newline="") as fh:
                fh.write(csv_text(cell_rows, header=False))
            rows.extend(cell_rows)
            entry.update(status="done")
            entry.pop("error", None)
        else:
            failed[cell.run_id] = error
            entry.update(status="failed", error=error)
        _save_manifest(man_path, man)
        if progress:
            progress(cell, error)

    for c in todo:
        man["cells"].setdefault(c.run_id, {})["started"] = time.time()
    _save_manifest(man_path, man)

    if workers <= 1:
        for c in todo:
            try:
                finish(c, _cell_rows(cfg, c))
            except Exception as exc:  # a failed cell is recorded, the sweep goes on
                finish(c, error=f"{type(exc).__name__}: {exc}")
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {pool.submit(_cell_rows, cfg, c): c for c in todo}
            for fut in as_completed(futs):
                c = futs[fut]
                try:
                    finish(c, fut.result())
                except Exception as exc:
                    finish(c, error=f"{type(exc).__name__}: {exc}")

    # run ids lead with the zero-padded cell ordinal, so this is cross-product order
    rows.sort(key=lambda r: (r["run_id"], r["generation"]))
    output = emit(rows, out_dir, "results", fmt) if rows else ""
    return SweepResult(rows, output, failed, len(cells) - len(todo))
