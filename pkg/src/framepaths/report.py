"""Machine-readable run artifacts.

Estimate runs are written as JSON documents, verification runs as CSV
residual tables, and optional plot data as tidy CSV. Every float is
serialized with %.17g, which round-trips exactly, so a report can be
reloaded and compared bit for bit. Reports contain only deterministic
content: wall-clock timings stay in the console summary.
"""

from __future__ import annotations

import csv
import json

import numpy as np


def jsonable(obj):
    """Recursively convert numpy containers and scalars to plain Python."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def format_number(x):
    """Shortest-of-17-significant-digits text for a float, exact round trip."""
    if isinstance(x, (bool, np.bool_)):
        raise TypeError("booleans are not numbers here")
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not np.isfinite(x):
        raise ValueError("non-finite value in report")
    return format(x, ".17g")


def _emit(obj, indent, out):
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for k, (key, val) in enumerate(obj.items()):
            out.append(pad + "  " + json.dumps(key) + ": ")
            _emit(val, indent + 1, out)
            out.append(",\n" if k + 1 < len(obj) else "\n")
        out.append(pad + "}")
    elif isinstance(obj, list):
        if not obj:
            out.append("[]")
            return
        flat = all(not isinstance(v, (dict, list)) for v in obj)
        if flat:
            out.append("[" + ", ".join(_scalar(v) for v in obj) + "]")
            return
        out.append("[\n")
        for k, val in enumerate(obj):
            out.append(pad + "  ")
            _emit(val, indent + 1, out)
            out.append(",\n" if k + 1 < len(obj) else "\n")
        out.append(pad + "]")
    else:
        out.append(_scalar(obj))


def _scalar(v):
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    return format_number(v)


def dump_json(payload):
    """Serialize a report dict; floats go through format_number."""
    out = []
    _emit(jsonable(payload), 0, out)
    out.append("\n")
    return "".join(out)


def write_json(path, payload):
    text = dump_json(payload)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return text


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def csv_cell(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return format_number(v)


def write_csv(path, fieldnames, rows):
    """Rows are dicts; all values formatted for exact round trips."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: csv_cell(v) for k, v in row.items()})


PLOT_FIELDS = ("series", "x", "y", "yerr")


def write_plot_csv(path, rows):
    """Tidy plot table: one (series, x, y, yerr) record per point."""
    write_csv(path, PLOT_FIELDS, rows)


def estimate_payload(est, config):
    """JSON document for a single estimator run, embedding the resolved
    config. Identical configs must produce identical documents, so the
    elapsed-time diagnostic is deliberately dropped."""
    diag = {k: v for k, v in est.diagnostics.items() if k != "elapsed_seconds"}
    return {
        "kind": "estimate",
        "config": config,
        "scenario": est.scenario,
        "method": est.method,
        "gradient": est.gradient,
        "stderr": est.stderr,
        "semigroup": est.semigroup,
        "semigroup_stderr": est.semigroup_stderr,
        "n_paths": est.n_paths,
        "n_steps": est.n_steps,
        "horizon": est.horizon,
        "seed": est.seed,
        "settings": est.settings,
        "terms": est.terms,
        "diagnostics": diag,
    }


def comparison_payload(comp, a_path, b_path, config):
    return {
        "kind": "comparison",
        "config": config,
        "a": a_path,
        "b": b_path,
        "difference": comp["difference"],
        "stderr": comp["stderr"],
        "z": comp["z"],
        "max_abs_z": comp["max_abs_z"],
        "verdict": comp["verdict"],
    }


def estimate_plot_rows(est):
    rows = []
    grad = np.asarray(est.gradient)
    se = np.asarray(est.stderr)
    for k, (g, s) in enumerate(zip(grad.ravel(), se.ravel())):
        rows.append({"series": "gradient", "x": k, "y": g, "yerr": s})
    sg = np.asarray(est.semigroup)
    sgse = np.asarray(est.semigroup_stderr)
    for k, (g, s) in enumerate(zip(sg.ravel(), sgse.ravel())):
        rows.append({"series": "semigroup", "x": k, "y": g, "yerr": s})
    return rows


def residual_plot_rows(rows, value_fields):
    out = []
    for field in value_fields:
        for row in rows:
            out.append({"series": field, "x": row["state"],
                        "y": row[field], "yerr": 0.0})
    return out
