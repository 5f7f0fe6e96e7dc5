"""CSV and JSON file formats for the command-line surface.

Sites: header ``id,x,y``, one row per site. Panels: header of site ids,
one row per block. UTF-8, '.' decimal, ',' separator. Floats are written
with repr-level precision so a parse/emit cycle is lossless.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .types import MaximaPanel, SiteSet, ValidationError


def _fmt(x: float) -> str:
    # repr of a float is the shortest string that round-trips exactly
    return repr(float(x))


def read_sites(path: str | Path) -> SiteSet:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip().lower() for c in rows[0]] != ["id", "x", "y"]:
        raise ValidationError(f"{path}: sites file must start with header 'id,x,y'")
    labels, coords = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ValidationError(f"{path}:{lineno}: expected 3 columns")
        labels.append(row[0].strip())
        try:
            coords.append((float(row[1]), float(row[2])))
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: non-numeric coordinate") from exc
    return SiteSet(np.array(coords), labels=tuple(labels))


def write_sites(sites: SiteSet, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y"])
        for label, (x, y) in zip(sites.labels, sites.coords):
            writer.writerow([label, _fmt(x), _fmt(y)])


def read_panel(path: str | Path, sites: SiteSet | None = None) -> MaximaPanel:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise ValidationError(f"{path}: a panel needs a header and at least 2 rows")
    ids = tuple(c.strip() for c in rows[0])
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(ids):
            raise ValidationError(f"{path}:{lineno}: expected {len(ids)} columns")
        try:
            values.append([float(c) for c in row])
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: non-numeric or missing entry") from exc
    panel = MaximaPanel(np.array(values), site_ids=ids)
    if sites is not None:
        if panel.d != sites.d:
            raise ValidationError(f"{path}: panel has {panel.d} columns, sites file has {sites.d}")
        if panel.site_ids != sites.labels:
            raise ValidationError(f"{path}: panel column ids do not match the sites file")
    return panel


def write_panel(panel: MaximaPanel, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(panel.site_ids)
        for row in panel.values:
            writer.writerow([_fmt(v) for v in row])


def write_json(payload: dict, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str | Path) -> dict:
    with Path(path).open(encoding="utf-8") as fh:
        return json.load(fh)
