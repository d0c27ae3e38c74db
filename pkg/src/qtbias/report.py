"""Result bundles and their on-disk artifacts.

Every artifact starts with a header naming the experiment, the config hash and
the seed. Floats are written with ``repr`` (shortest round-trip form), so equal
numbers always produce equal bytes; nothing machine- or time-dependent is
written.
"""

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field

STATUSES = ("PASS", "FAIL", "INFO")


@dataclass(frozen=True)
class Check:
    name: str
    status: str
    value: object = None
    detail: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown check status {self.status!r}")


def threshold_check(name, value, limit, detail=""):
    """PASS when ``value <= limit``."""
    status = "PASS" if value <= limit else "FAIL"
    return Check(name, status, float(value), detail or f"limit {limit!r}")


@dataclass(frozen=True)
class Table:
    columns: tuple
    rows: list


@dataclass
class Bundle:
    experiment: str
    config: dict
    config_hash: str
    seed: int
    results: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)

    @property
    def failed(self):
        return [c for c in self.checks if c.status == "FAIL"]

    def header(self):
        return {"experiment": self.experiment, "config_hash": self.config_hash, "seed": self.seed}


def _scalar(x):
    """Text form of a scalar cell."""
    if hasattr(x, "item"):  # numpy scalar
        x = x.item()
    if isinstance(x, bool) or x is None:
        return str(x).lower() if x is not None else ""
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, complex):
        return f"{x.real!r}{x.imag:+}j"
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "item"):
        return _jsonable(x.item())
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)  # "inf" / "nan": JSON has no literal for these
    return x


def flatten(d, prefix=""):
    """Nested mapping to ``(dotted key, text)`` pairs; lists are space-joined."""
    out = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.extend(flatten(v, key + "."))
        elif isinstance(v, (list, tuple)):
            out.append((key, " ".join(_scalar(x) for x in v)))
        else:
            out.append((key, _scalar(v)))
    return out


def _csv_text(header, columns, rows):
    buf = io.StringIO()
    for k, v in header.items():
        buf.write(f"# {k}={v}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_scalar(x) for x in row])
    return buf.getvalue()


def _json_text(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=False, allow_nan=False) + "\n"


def _check_rows(checks):
    return [(c.name, c.status, c.value, c.detail) for c in checks]


def render_artifacts(bundle, formats):
    """Mapping ``filename -> text`` for the bundle in the requested formats."""
    if bundle.results is None or not bundle.checks:
        raise ValueError("incomplete bundle: results and checks are required")
    head = bundle.header()
    files = {}
    for fmt in formats:
        if fmt == "csv":
            files["results.csv"] = _csv_text(head, ("key", "value"), flatten(bundle.results))
            files["checks.csv"] = _csv_text(head, ("name", "status", "value", "detail"),
                                            _check_rows(bundle.checks))
            for name, t in bundle.tables.items():
                files[f"{name}.csv"] = _csv_text(head, t.columns, t.rows)
        elif fmt == "json":
            files["results.json"] = _json_text({"header": head, "results": bundle.results})
            files["checks.json"] = _json_text({"header": head, "checks": [
                {"name": c.name, "status": c.status, "value": c.value, "detail": c.detail}
                for c in bundle.checks]})
            for name, t in bundle.tables.items():
                files[f"{name}.json"] = _json_text(
                    {"header": head, "columns": list(t.columns), "rows": [list(r) for r in t.rows]})
        else:
            raise ValueError(f"unknown output format {fmt!r}")
    files["config.json"] = _json_text(bundle.config)
    files["summary.txt"] = emit_report(bundle)
    return files


def emit_report(bundle):
    """Deterministic plain-text summary listing results and every check outcome."""
    if bundle.results is None or not bundle.checks:
        raise ValueError("incomplete bundle: results and checks are required")
    lines = [f"{k}: {v}" for k, v in bundle.header().items()]
    lines.append("")
    lines.append("results:")
    lines.extend(f"  {k} = {v}" for k, v in flatten(bundle.results))
    if bundle.tables:
        lines.append("")
        lines.append("tables:")
        lines.extend(f"  {name}: {len(t.rows)} rows ({','.join(t.columns)})"
                     for name, t in bundle.tables.items())
    lines.append("")
    lines.append("checks:")
    for c in bundle.checks:
        value = "" if c.value is None else f" value={_scalar(c.value)}"
        detail = f" ({c.detail})" if c.detail else ""
        lines.append(f"  {c.status} {c.name}{value}{detail}")
    lines.append("")
    n_fail = len(bundle.failed)
    lines.append("status: " + ("OK" if n_fail == 0 else f"FAILED ({n_fail} check(s))"))
    return "\n".join(lines) + "\n"


def write_bundle(bundle, directory, formats):
    """Write all artifacts under ``directory``; returns the sorted file names."""
    files = render_artifacts(bundle, formats)
    os.makedirs(directory, exist_ok=True)
    for name, text in files.items():
        with open(os.path.join(directory, name), "w", newline="") as fh:
            fh.write(text)
    return sorted(files)
