"""Result persistence: atomic writes, CSV tables, JSON records, manifests
and flat key-value config files."""

from __future__ import annotations

import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import PreconditionError

VERSION = "0.1.0"


class UsageError(PreconditionError):
    code = "usage"


def _plain(x):
    """JSON-friendly copy of numpy scalars / arrays / complex numbers."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def atomic_write(path: Path, text: str):
    """Write ``text`` to a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(rows: list[dict], units: dict | None = None) -> str:
    """Header row (with units in brackets when given) plus data rows."""
    if not rows:
        return ""
    cols = list(rows[0])
    units = units or {}
    head = ",".join(f"{c} [{units[c]}]" if c in units else c for c in cols)
    out = [head]
    for r in rows:
        vals = []
        for c in cols:
            v = _plain(r[c])
            vals.append(f"{v:.17g}" if isinstance(v, float) else
                        json.dumps(v) if isinstance(v, list) else str(v))
        out.append(",".join(vals))
    return "\n".join(out) + "\n"


def read_config(path) -> dict:
    """Flat TOML-style key = value file; tables flatten to dotted keys."""
    with open(path, "rb") as f:
        try:
            data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise UsageError(f"cannot parse config {path}: {e}") from None

    def flat(d, pre=""):
        out = {}
        for k, v in d.items():
            key = f"{pre}{k}"
            if isinstance(v, dict):
                out.update(flat(v, key + "."))
            else:
                out[key] = v
        return out

    return flat(data)


def write_outputs(out_dir, experiment, record: dict, table=None, fmt="csv",
                  manifest=None, units=None, extra_files=None):
    """Results (CSV table or JSON record), record.json and manifest.json,
    each written atomically inside ``out_dir``."""
    out = Path(out_dir)
    paths = {}
    if fmt == "csv" and table:
        p = out / f"{experiment}.csv"
        atomic_write(p, csv_text(table, units))
        paths["table"] = p.name
    elif table:
        record = {**record, "table": table}
    for name, text in (extra_files or {}).items():
        p = out / name
        atomic_write(p, text)
        paths[name] = p.name
    p = out / f"{experiment}.json"
    atomic_write(p, dumps(record))
    paths["record"] = p.name
    if manifest is not None:
        atomic_write(out / "manifest.json", dumps({**manifest, "files": paths}))
    return paths
