"""Command-line front end.

One executable with seven subcommands: the three estimators (bundle,
classical, finite-difference oracle), the two identity verification
suites, a path dumper, and a report comparator. Configuration comes from
flags or from a key=value file (one pair per line, # comments); flags
override the file. Every artifact embeds the fully resolved config, so a
run can be reproduced bit for bit from its own report.

Exit codes: 0 = PASS/complete, 2 = statistical FAIL (z-score or residual
over threshold), 1 = usage or runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .drivers import IncrementDriver
from .estimators import (
    PASS_Z,
    estimate_gradient,
    estimate_gradient_classical,
    estimate_gradient_fd,
)
from .paths import EngineSettings, PathEngine, PathRecorder
from .report import (
    comparison_payload,
    csv_cell,
    estimate_payload,
    estimate_plot_rows,
    load_json,
    residual_plot_rows,
    write_json,
    write_plot_csv,
)
from .scenarios import get_scenario, scenario_names
from .verify.identities import (
    check_expansion,
    check_flow_commutator,
    check_second_commutation,
)
from .verify.sampling import sample_states


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_bool(text):
    low = str(text).strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


_CONVERTERS = {
    "scenario": str,
    "T": float,
    "h": float,
    "n_paths": int,
    "seed": int,
    "eps": float,
    "nbar": str,
    "fk_side": str,
    "output": str,
    "emit_plot_data": _parse_bool,
    "states": int,
    "workers": int,
    "threshold": float,
    "a": str,
    "b": str,
}

_RUN_KEYS = ("scenario", "T", "h", "n_paths", "seed", "nbar", "fk_side",
             "workers", "emit_plot_data", "output")
_KEYS = {
    "estimate": _RUN_KEYS,
    "estimate-classical": _RUN_KEYS,
    "oracle-fd": _RUN_KEYS + ("eps",),
    "verify-commutators": ("scenario", "states", "seed", "threshold",
                           "emit_plot_data", "output"),
    "verify-expansion": ("scenario", "states", "seed", "threshold",
                         "emit_plot_data", "output"),
    "simulate-paths": ("scenario", "T", "h", "n_paths", "seed", "output"),
    "compare": ("a", "b", "output"),
}

_DEFAULT_OUTPUT = {
    "estimate": "report.json",
    "estimate-classical": "report.json",
    "oracle-fd": "report.json",
    "verify-commutators": "residuals.csv",
    "verify-expansion": "residuals.csv",
    "simulate-paths": "paths.csv",
    "compare": "compare.json",
}


def read_config_file(path):
    """key=value pairs, one per line; blank lines and # comments skipped."""
    pairs = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    for ln, raw in enumerate(lines, 1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise UsageError(f"{path}:{ln}: expected key=value, got {text!r}")
        key, _, value = text.partition("=")
        pairs[key.strip().replace("-", "_")] = value.strip()
    return pairs


def _build_parser():
    parser = _Parser(prog="framepaths",
                     description="Monte Carlo horizontal gradients over "
                                 "vector bundles, with verification suites.")
    sub = parser.add_subparsers(dest="subcommand", required=True,
                                parser_class=_Parser)

    def add_common(p):
        p.add_argument("--config", help="key=value config file; flags override")
        p.add_argument("--output", help="artifact path")

    def add_run_flags(p):
        p.add_argument("--scenario", choices=scenario_names())
        p.add_argument("--T", type=float, dest="T", help="time horizon")
        p.add_argument("--h", type=float, help="step size; T/h must be integral")
        p.add_argument("--n-paths", type=int, dest="n_paths")
        p.add_argument("--seed", type=int)
        p.add_argument("--nbar", choices=["row", "col"])
        p.add_argument("--fk-side", choices=["left", "right"], dest="fk_side")
        p.add_argument("--workers", type=int,
                       help="worker threads; never changes results")
        p.add_argument("--emit-plot-data", action=argparse.BooleanOptionalAction,
                       dest="emit_plot_data", default=None)

    for name in ("estimate", "estimate-classical", "oracle-fd"):
        p = sub.add_parser(name)
        add_common(p)
        add_run_flags(p)
        if name == "oracle-fd":
            p.add_argument("--eps", type=float,
                           help="finite-difference shift on the base")

    for name in ("verify-commutators", "verify-expansion"):
        p = sub.add_parser(name)
        add_common(p)
        p.add_argument("--scenario", choices=scenario_names())
        p.add_argument("--states", type=int, help="number of random states")
        p.add_argument("--seed", type=int)
        p.add_argument("--threshold", type=float, help="PASS residual bound")
        p.add_argument("--emit-plot-data", action=argparse.BooleanOptionalAction,
                       dest="emit_plot_data", default=None)

    p = sub.add_parser("simulate-paths")
    add_common(p)
    p.add_argument("--scenario", choices=scenario_names())
    p.add_argument("--T", type=float, dest="T")
    p.add_argument("--h", type=float)
    p.add_argument("--n-paths", type=int, dest="n_paths")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("compare")
    add_common(p)
    p.add_argument("--a", help="first run report (JSON)")
    p.add_argument("--b", help="second run report (JSON)")
    return parser


def _resolve(args):
    """Merge defaults, config file, and flags into one validated dict."""
    sub = args.subcommand
    allowed = _KEYS[sub]
    cfg = {}
    if getattr(args, "config", None):
        pairs = read_config_file(args.config)
        file_sub = pairs.pop("subcommand", None)
        if file_sub is not None and file_sub != sub:
            raise UsageError(
                f"config file is for subcommand {file_sub!r}, not {sub!r}")
        for key, raw in pairs.items():
            if key not in allowed:
                raise UsageError(f"unknown config key: {key!r}")
            try:
                cfg[key] = _CONVERTERS[key](raw)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"bad value for {key!r}: {raw!r}") from exc
    for key in allowed:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag

    if sub == "compare":
        for key in ("a", "b"):
            if not cfg.get(key):
                raise UsageError(f"missing required key: {key!r}")
        cfg.setdefault("output", _DEFAULT_OUTPUT[sub])
        return {"subcommand": sub, **{k: cfg.get(k) for k in allowed}}

    if not cfg.get("scenario"):
        raise UsageError("missing required key: 'scenario'")
    try:
        scenario = get_scenario(cfg["scenario"])
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None

    out = {"subcommand": sub, "scenario": cfg["scenario"]}
    if "T" in allowed:
        out["T"] = float(cfg.get("T", scenario.default_T))
        out["h"] = float(cfg.get("h", out["T"] / 100.0))
        if out["T"] <= 0 or out["h"] <= 0:
            raise UsageError("T and h must be positive")
        steps = out["T"] / out["h"]
        if abs(steps - round(steps)) > 1e-9 * max(1.0, abs(steps)) or round(steps) < 1:
            raise UsageError(
                f"T/h must be an integer step count (T={out['T']}, h={out['h']})")
        out["n_paths"] = int(cfg.get("n_paths", 10000))
        if out["n_paths"] < 1:
            raise UsageError("n_paths must be >= 1")
    out["seed"] = int(cfg.get("seed", 0))
    if "nbar" in allowed:
        out["nbar"] = cfg.get("nbar", "row")
        out["fk_side"] = cfg.get("fk_side", "right")
        if out["nbar"] not in ("row", "col"):
            raise UsageError(f"bad value for 'nbar': {out['nbar']!r}")
        if out["fk_side"] not in ("left", "right"):
            raise UsageError(f"bad value for 'fk_side': {out['fk_side']!r}")
        out["workers"] = int(cfg.get("workers", 1))
        if out["workers"] < 1:
            raise UsageError("workers must be >= 1")
        out["emit_plot_data"] = bool(cfg.get("emit_plot_data", False))
    if "eps" in allowed:
        out["eps"] = float(cfg.get("eps", 1e-3))
        if out["eps"] <= 0:
            raise UsageError("eps must be positive")
    if "states" in allowed:
        out["states"] = int(cfg.get("states", 100))
        if out["states"] < 1:
            raise UsageError("states must be >= 1")
        default_thr = 5e-4 if sub == "verify-commutators" else 1e-3
        out["threshold"] = float(cfg.get("threshold", default_thr))
        if out["threshold"] <= 0:
            raise UsageError("threshold must be positive")
        out["emit_plot_data"] = bool(cfg.get("emit_plot_data", False))
    out["output"] = cfg.get("output", _DEFAULT_OUTPUT[sub])
    return out


def _plot_path(output):
    stem, _ = os.path.splitext(output)
    return stem + "-plot.csv"


def _settings_from(cfg):
    return EngineSettings(
        n_steps=int(round(cfg["T"] / cfg["h"])),
        horizon=cfg["T"],
        nbar=cfg.get("nbar", "row"),
        fk_side=cfg.get("fk_side", "right"),
    )


def _fmt_vec(arr):
    return "[" + ", ".join(format(v, ".6g") for v in np.ravel(arr)) + "]"


def _cmd_estimate(cfg):
    scenario = get_scenario(cfg["scenario"])
    settings = _settings_from(cfg)
    runner = {
        "estimate": estimate_gradient,
        "estimate-classical": estimate_gradient_classical,
    }[cfg["subcommand"]]
    est = runner(scenario, cfg["n_paths"], cfg["seed"], settings,
                 workers=cfg["workers"])
    write_json(cfg["output"], estimate_payload(est, cfg))
    if cfg["emit_plot_data"]:
        write_plot_csv(_plot_path(cfg["output"]), estimate_plot_rows(est))
    elapsed = est.diagnostics.get("elapsed_seconds", 0.0)
    print(f"complete {cfg['subcommand']} {cfg['scenario']}: "
          f"gradient {_fmt_vec(est.gradient)} stderr {_fmt_vec(est.stderr)} "
          f"n_paths={cfg['n_paths']} -> {cfg['output']} ({elapsed:.1f}s)")
    return 0


def _cmd_oracle_fd(cfg):
    scenario = get_scenario(cfg["scenario"])
    settings = _settings_from(cfg)
    est = estimate_gradient_fd(scenario, cfg["n_paths"], cfg["seed"], settings,
                               eps=cfg["eps"], workers=cfg["workers"])
    write_json(cfg["output"], estimate_payload(est, cfg))
    if cfg["emit_plot_data"]:
        write_plot_csv(_plot_path(cfg["output"]), estimate_plot_rows(est))
    elapsed = est.diagnostics.get("elapsed_seconds", 0.0)
    print(f"complete oracle-fd {cfg['scenario']}: "
          f"gradient {_fmt_vec(est.gradient)} stderr {_fmt_vec(est.stderr)} "
          f"eps={cfg['eps']:g} -> {cfg['output']} ({elapsed:.1f}s)")
    return 0


def _write_residuals(cfg, fieldnames, rows):
    """Residual table with the resolved config echoed as # key=value lines
    ahead of the header, in the same format the config reader accepts."""
    with open(cfg["output"], "w", encoding="utf-8", newline="") as fh:
        for key, val in cfg.items():
            fh.write(f"# {key}={csv_cell(val)}\n")
        fh.write(",".join(fieldnames) + "\n")
        for row in rows:
            fh.write(",".join(csv_cell(row[k]) for k in fieldnames) + "\n")


def _cmd_verify_commutators(cfg):
    scenario = get_scenario(cfg["scenario"])
    rng = np.random.default_rng(cfg["seed"])
    batch = sample_states(scenario.geom, cfg["states"], rng)
    rep = check_flow_commutator(scenario.geom, batch, per_state=True)
    fields = ("state", "base", "frame_base", "frame_bundle1", "frame_bundle2",
              "max_residual", "commutator_scale")
    rows = [
        {"state": k, "base": rep["base"][k], "frame_base": rep["frame_base"][k],
         "frame_bundle1": rep["frame_bundle1"][k],
         "frame_bundle2": rep["frame_bundle2"][k],
         "max_residual": rep["max_residual"][k],
         "commutator_scale": rep["commutator_scale"][k]}
        for k in range(cfg["states"])
    ]
    _write_residuals(cfg, fields, rows)
    if cfg["emit_plot_data"]:
        write_plot_csv(_plot_path(cfg["output"]),
                       residual_plot_rows(rows, ("max_residual",)))
    worst = float(np.max(rep["max_residual"]))
    ok = worst <= cfg["threshold"]
    verdict = "PASS" if ok else "FAIL"
    print(f"{verdict} verify-commutators {cfg['scenario']}: {cfg['states']} states, "
          f"max residual {worst:.3g} vs {cfg['threshold']:g} -> {cfg['output']}")
    return 0 if ok else 2


def _cmd_verify_expansion(cfg):
    scenario = get_scenario(cfg["scenario"])
    rng = np.random.default_rng(cfg["seed"])
    batch = sample_states(scenario.geom, cfg["states"], rng)
    geom, vf, phi = scenario.geom, scenario.vfields, scenario.test_function
    rep1 = check_expansion(geom, vf, phi, batch)
    rep2 = check_second_commutation(geom, vf, phi, batch)
    r1 = np.max(np.abs(rep1["residual"]), axis=(1, 2))
    r2 = np.max(np.abs(rep2["residual"]), axis=(1, 2))
    fields = ("state", "expansion", "second_commutation", "max_residual")
    rows = [
        {"state": k, "expansion": r1[k], "second_commutation": r2[k],
         "max_residual": max(r1[k], r2[k])}
        for k in range(cfg["states"])
    ]
    _write_residuals(cfg, fields, rows)
    if cfg["emit_plot_data"]:
        write_plot_csv(_plot_path(cfg["output"]),
                       residual_plot_rows(rows, ("expansion", "second_commutation")))
    worst = float(max(np.max(r1), np.max(r2)))
    ok = worst <= cfg["threshold"]
    verdict = "PASS" if ok else "FAIL"
    print(f"{verdict} verify-expansion {cfg['scenario']}: {cfg['states']} states, "
          f"max residual {worst:.3g} vs {cfg['threshold']:g} -> {cfg['output']}")
    return 0 if ok else 2


def _record_fields(m, n1, n2):
    cols = ["path", "t"]
    cols += [f"x{i}" for i in range(m)]
    cols += [f"u{r}{c}" for r in range(m) for c in range(m)]
    cols += [f"y{a}" for a in range(n1)]
    cols += [f"m{r}{c}" for r in range(m) for c in range(m)]
    for j in range(m):
        cols += [f"g1_{j}_{a}{b}" for a in range(n1) for b in range(n1)]
    for j in range(m):
        cols += [f"g2_{j}_{r}{s}" for r in range(n2) for s in range(n2)]
    for j in range(m):
        cols += [f"yd_{j}_{a}" for a in range(n1)]
    return cols


def _cmd_simulate_paths(cfg):
    scenario = get_scenario(cfg["scenario"])
    settings = _settings_from(cfg)
    engine = PathEngine(scenario, settings)
    driver = IncrementDriver(cfg["seed"])
    recorder = PathRecorder()
    n_paths = cfg["n_paths"]
    starts = [scenario.initial_state(1).take(np.zeros(n_paths, dtype=int))]
    result = engine.run_chunk(driver, np.arange(n_paths), starts,
                              recorder=recorder)
    arrays = recorder.arrays()
    n_rec = arrays["x"].shape[0]
    geom = scenario.geom
    fields = _record_fields(geom.m, geom.n1, geom.n2)

    def rows():
        for p in range(n_paths):
            for s in range(n_rec):
                vals = [p, s * cfg["h"]]
                vals += arrays["x"][s, p].ravel().tolist()
                vals += arrays["u"][s, p].ravel().tolist()
                vals += arrays["y"][s, p].ravel().tolist()
                vals += arrays["m_damp"][s, p].ravel().tolist()
                vals += arrays["g1"][s, p].ravel().tolist()
                vals += arrays["g2"][s, p].ravel().tolist()
                vals += arrays["yd"][s, p].ravel().tolist()
                yield dict(zip(fields, vals))

    _write_residuals(cfg, fields, rows())
    retried = int(np.sum(result.retries > 0))
    note = f", {retried} paths resampled after the recorded pass" if retried else ""
    print(f"complete simulate-paths {cfg['scenario']}: {n_paths} paths x "
          f"{n_rec} records -> {cfg['output']}{note}")
    return 0


def _cmd_compare(cfg):
    rep_a = load_json(cfg["a"])
    rep_b = load_json(cfg["b"])
    try:
        ga, sa = np.asarray(rep_a["gradient"], float), np.asarray(rep_a["stderr"], float)
        gb, sb = np.asarray(rep_b["gradient"], float), np.asarray(rep_b["stderr"], float)
    except KeyError as exc:
        raise UsageError(f"report missing field {exc}") from exc
    if ga.shape != gb.shape:
        raise UsageError(
            f"gradient shapes differ: {ga.shape} vs {gb.shape}")
    diff = ga - gb
    var = np.square(sa) + np.square(sb)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = diff / np.sqrt(var)
    z = np.where(diff == 0.0, 0.0, z)
    if not np.all(np.isfinite(z)):
        raise UsageError("non-finite z-score; reports lack usable stderr")
    zmax = float(np.max(np.abs(z)))
    ok = zmax <= PASS_Z
    comp = {
        "difference": diff,
        "stderr": np.sqrt(var),
        "z": z,
        "max_abs_z": zmax,
        "verdict": "PASS" if ok else "FAIL",
    }
    write_json(cfg["output"], comparison_payload(comp, cfg["a"], cfg["b"], cfg))
    print(f"{comp['verdict']} compare: max |z| = {zmax:.3g} over {z.size} "
          f"components (a={cfg['a']}, b={cfg['b']}) -> {cfg['output']}")
    return 0 if ok else 2


_RUNNERS = {
    "estimate": _cmd_estimate,
    "estimate-classical": _cmd_estimate,
    "oracle-fd": _cmd_oracle_fd,
    "verify-commutators": _cmd_verify_commutators,
    "verify-expansion": _cmd_verify_expansion,
    "simulate-paths": _cmd_simulate_paths,
    "compare": _cmd_compare,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve(args)
        return _RUNNERS[cfg["subcommand"]](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
