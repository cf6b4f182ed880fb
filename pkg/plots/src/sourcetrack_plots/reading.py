"""Readers for the sourcetrack CSV contracts.

Every parse failure raises ContractError carrying the file and line number.
These readers never recompute physics; they only load what the pipeline
wrote.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class ContractError(ValueError):
    """A file does not follow its documented CSV contract."""


def _fail(path, lineno, message):
    raise ContractError(f"{path}:{lineno}: {message}")


def _floats(parts, path, lineno):
    try:
        return [float(p) for p in parts]
    except ValueError:
        _fail(path, lineno, f"expected numbers, got {parts!r}")


def read_track_csv(path):
    """Read a path CSV ('j,source_id,x,y,z[,indicator_value]') into a
    (J, S, 3) array."""
    path = Path(path)
    rows = []
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header[:5] != ["j", "source_id", "x", "y", "z"]:
            _fail(path, 1, f"unexpected header {header!r}")
        for lineno, line in enumerate(f, start=2):
            parts = line.strip().split(",")
            if len(parts) < 5:
                _fail(path, lineno, f"expected at least 5 columns, got {len(parts)}")
            try:
                j, s = int(parts[0]), int(parts[1])
            except ValueError:
                _fail(path, lineno, f"bad period or source id in {parts[:2]!r}")
            rows.append((j, s, *_floats(parts[2:5], path, lineno)))
    if not rows:
        _fail(path, 2, "no data rows")
    n_periods = max(r[0] for r in rows)
    n_sources = max(r[1] for r in rows)
    points = np.full((n_periods, n_sources, 3), np.nan)
    for j, s, x, y, z in rows:
        points[j - 1, s - 1] = (x, y, z)
    if np.isnan(points).any():
        _fail(path, len(rows) + 1, "missing (period, source) rows")
    return points


def read_true_path_csv(path):
    """Read a ground-truth path ('j,t_mid,x,y,z') into a (J, 3) array."""
    path = Path(path)
    rows = []
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header != ["j", "t_mid", "x", "y", "z"]:
            _fail(path, 1, f"unexpected header {header!r}")
        for lineno, line in enumerate(f, start=2):
            parts = line.strip().split(",")
            if len(parts) != 5:
                _fail(path, lineno, f"expected 5 columns, got {len(parts)}")
            rows.append(_floats(parts[2:5], path, lineno))
    if not rows:
        _fail(path, 2, "no data rows")
    return np.asarray(rows)


def read_slice_csv(path):
    """Read an indicator cross-section: '#'-metadata lines then an n x n
    matrix. Returns (meta dict, values)."""
    path = Path(path)
    meta = {}
    data_lines = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                body = text.lstrip("#").strip()
                if "=" not in body:
                    _fail(path, lineno, f"metadata line without '=': {text!r}")
                key, value = (part.strip() for part in body.split("=", 1))
                meta[key] = value
            else:
                data_lines.append((lineno, text))
    for key in ("lower", "upper", "n", "period", "z_index"):
        if key not in meta:
            _fail(path, 1, f"missing metadata key {key!r}")
    n = int(meta["n"])
    values = np.empty((len(data_lines), n))
    if len(data_lines) != n:
        _fail(path, data_lines[0][0] if data_lines else 1,
              f"expected {n} data rows, found {len(data_lines)}")
    for i, (lineno, text) in enumerate(data_lines):
        parts = text.split(",")
        if len(parts) != n:
            _fail(path, lineno, f"expected {n} columns, got {len(parts)}")
        values[i] = _floats(parts, path, lineno)
    meta["lower"] = [float(v) for v in meta["lower"].split()]
    meta["upper"] = [float(v) for v in meta["upper"].split()]
    return meta, values


def read_chain_csv(path):
    """Read a chain dump ('k,x,y,z,log_post,accepted') into a dict of
    arrays: samples (K, 3), log_post (K,), accepted (K,)."""
    path = Path(path)
    samples = []
    log_post = []
    accepted = []
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header != ["k", "x", "y", "z", "log_post", "accepted"]:
            _fail(path, 1, f"unexpected header {header!r}")
        for lineno, line in enumerate(f, start=2):
            parts = line.strip().split(",")
            if len(parts) != 6:
                _fail(path, lineno, f"expected 6 columns, got {len(parts)}")
            samples.append(_floats(parts[1:4], path, lineno))
            log_post.append(_floats(parts[4:5], path, lineno)[0])
            if parts[5] not in ("0", "1"):
                _fail(path, lineno, f"accepted flag must be 0 or 1, got {parts[5]!r}")
            accepted.append(parts[5] == "1")
    if not samples:
        _fail(path, 2, "no data rows")
    return {
        "samples": np.asarray(samples),
        "log_post": np.asarray(log_post),
        "accepted": np.asarray(accepted, dtype=bool),
    }


def read_metrics_txt(path):
    """Key-value metrics file into a dict of strings."""
    path = Path(path)
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.strip()
        if not text:
            continue
        if "=" not in text:
            _fail(path, lineno, f"expected 'key = value', got {text!r}")
        key, value = (part.strip() for part in text.split("=", 1))
        out[key] = value
    return out
