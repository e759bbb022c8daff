"""Dataset CSV and run-manifest serialization.

Dataset CSVs carry a header row; an empty field is a missing cell; values are
decimal with 17 significant digits so a write/read round trip is exact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time

import numpy as np

from .scm import Dag, Table


def write_table(table, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table.column_names)
        for r in range(table.n):
            writer.writerow(
                ""
                if table.mask[r, i]
                else format(table.values[r, i], ".17g")
                for i in range(table.d)
            )


def read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    d = len(header)
    values = np.zeros((len(rows), d))
    mask = np.zeros((len(rows), d), dtype=bool)
    for r, row in enumerate(rows):
        if len(row) != d:
            raise ValueError(f"{path}: row {r + 2} has {len(row)} fields, expected {d}")
        for i, field in enumerate(row):
            if field == "":
                mask[r, i] = True
            else:
                values[r, i] = float(field)
    return Table(values, mask, list(header))


def write_dag(dag, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dag.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def read_dag(path):
    with open(path, encoding="utf-8") as fh:
        return Dag.from_dict(json.load(fh))


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class ManifestWriter:
    """Collects a run's resolved config and artifacts, then writes manifest.json."""

    def __init__(self, command, config, seed, out_dir, inputs=()):
        self.command = command
        self.config = config
        self.seed = seed
        self.out_dir = out_dir
        self.inputs = list(inputs)
        self.outputs = []
        self._start = time.time()

    def add_output(self, path):
        self.outputs.append(path)
        return path

    def write(self):
        manifest = {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": sorted(self.inputs),
            "outputs": [
                {"path": os.path.relpath(p, self.out_dir), "sha256": _sha256(p)}
                for p in sorted(self.outputs)
            ],
            "wall_clock_seconds": round(time.time() - self._start, 3),
        }
        path = os.path.join(self.out_dir, "manifest.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def write_csv(path, header, rows):
    """Generic results CSV; floats rendered at 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                format(v, ".17g") if isinstance(v, float) else v for v in row
            )
