"""CSV / JSON persistence with atomic writes and provenance headers.

Every file written here carries the config hash and master seed: JSON files
under a top-level ``"provenance"`` key, CSV files as leading ``#`` comment
lines that the readers skip.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import IngestionError
from .hrf import SampledFilter
from .simulator import RoiTimeSeries


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` to a temporary sibling file, then rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (set, tuple)):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path, payload: dict, provenance: dict | None = None) -> Path:
    body = dict(payload)
    if provenance is not None:
        body = {"provenance": provenance, **body}
    return atomic_write_text(path, json.dumps(body, indent=2, default=_default, allow_nan=True) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise IngestionError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc


def _comment_lines(provenance: dict | None) -> str:
    if not provenance:
        return ""
    return "".join(f"# {k}: {v}\n" for k, v in provenance.items())


def write_table(path, header: Sequence[str], rows: Iterable[Sequence], provenance: dict | None = None) -> Path:
    buf = io.StringIO()
    buf.write(_comment_lines(provenance))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return atomic_write_text(path, buf.getvalue())


def read_table(path) -> tuple[list[str], np.ndarray, list[int]]:
    """Header, float matrix and source line numbers of a comment-prefixed CSV.

    Raises
    ------
    IngestionError
        On a missing header, ragged row or non-numeric cell; the message names
        the offending line.
    """
    path = Path(path)
    header, rows, line_numbers = None, [], []
    try:
        text = path.read_text()
    except OSError as exc:
        raise IngestionError(f"{path}: cannot read ({exc})") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cells = next(csv.reader([line]))
        if header is None:
            header = [c.strip() for c in cells]
            continue
        if len(cells) != len(header):
            raise IngestionError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise IngestionError(f"{path}: line {lineno}: non-numeric value ({exc})") from exc
        line_numbers.append(lineno)
    if header is None:
        raise IngestionError(f"{path}: no header row")
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    data = np.array(rows)
    bad = ~np.all(np.isfinite(data), axis=1)
    if np.any(bad):
        raise IngestionError(f"{path}: line {line_numbers[int(np.argmax(bad))]}: non-finite value")
    return header, data, line_numbers


def write_timeseries_csv(path, series: RoiTimeSeries, provenance: dict | None = None) -> Path:
    header = ["time", *series.labels]
    rows = np.column_stack([series.times, series.data.T])
    return write_table(path, header, rows.tolist(), provenance)


def read_timeseries_csv(path, fs: float | None = None) -> RoiTimeSeries:
    """Load a ``time, region1, region2, ...`` CSV as an ``M x N`` series.

    The sampling rate is taken from the time column unless ``fs`` is given.
    """
    header, data, lines = read_table(path)
    if header[0].lower() not in ("time", "t"):
        raise IngestionError(f"{path}: line {_header_line(path)}: first column must be 'time'")
    if len(header) < 2:
        raise IngestionError(f"{path}: no region columns")
    t = data[:, 0]
    if fs is None:
        if t.size < 2:
            raise IngestionError(f"{path}: need two samples to infer the sampling rate")
        steps = np.diff(t)
        if np.any(steps <= 0):
            raise IngestionError(f"{path}: line {lines[int(np.argmax(steps <= 0)) + 1]}: time is not increasing")
        fs = 1.0 / float(np.median(steps))
    return RoiTimeSeries(data[:, 1:].T, fs, tuple(header[1:]))


def _header_line(path) -> int:
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if line.strip() and not line.lstrip().startswith("#"):
            return lineno
    return 1


def write_hrfs_csv(path, hrfs: Sequence[SampledFilter], labels: Sequence[str], provenance: dict | None = None) -> Path:
    t = hrfs[0].times
    rows = np.column_stack([t, *[h.taps for h in hrfs]])
    return write_table(path, ["t", *labels], rows.tolist(), provenance)


def read_hrfs_csv(path) -> tuple[list[SampledFilter], list[str]]:
    header, data, _ = read_table(path)
    t = data[:, 0]
    if t.size < 2:
        raise IngestionError(f"{path}: an HRF needs at least two samples")
    dt = float(np.median(np.diff(t)))
    return [SampledFilter(data[:, j], dt) for j in range(1, data.shape[1])], header[1:]


def export_tensor(directory, tensor, filter_order: int, provenance: dict | None = None) -> Path:
    """One CSV per lag slice plus a JSON manifest, for inspection."""
    directory = Path(directory)
    files = []
    for tau, s in enumerate(tensor.slices):
        name = f"slice_{tau:03d}.csv"
        header = [f"c{j}" for j in range(s.shape[1])]
        write_table(directory / name, header, s.tolist(), provenance)
        files.append(name)
    manifest = {
        "m_regions": tensor.m_regions,
        "stack_depth": tensor.stack_depth,
        "filter_order": filter_order,
        "n_lags": tensor.n_lags,
        "lags": list(range(tensor.n_lags)),
        "slice_shape": list(tensor.slices.shape[1:]),
        "files": files,
    }
    return write_json(directory / "manifest.json", manifest, provenance)
