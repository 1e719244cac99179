"""Batch entry point: JSON-configured experiments with manifests.

Exit codes: 0 success, 1 order/comparison verdict violated, 2 config or
usage error, 3 numeric failure (non-finite states).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import control_lq, convergence, manifest, order, systemic
from .coefficients import make_coefficients
from .grid import TimeGrid
from .measures import load_samples_csv
from .noise import NoisePlan
from . import sde

EXIT_OK = 0
EXIT_VIOLATED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(Exception):
    pass


_MISSING = object()


def _get(cfg: dict, dotted: str, expected=None, default=_MISSING):
    """Fetch a config field by dotted path with a field-naming error."""
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            if default is not _MISSING:
                return default
            raise ConfigError(f"missing required field: {dotted}")
        node = node[part]
    if expected is not None and not isinstance(node, expected):
        names = expected.__name__ if isinstance(expected, type) else \
            "/".join(t.__name__ for t in expected)
        raise ConfigError(f"field {dotted} must be {names}, got {type(node).__name__}")
    return node


def _load_config(args) -> dict:
    if not args.config:
        raise ConfigError("a --config <path> JSON document is required")
    try:
        with open(args.config, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None


def _seed(args, cfg: dict) -> int:
    if args.seed is not None:
        return args.seed
    return int(_get(cfg, "seed", int, default=0))


def _outdir(args) -> Path:
    out = Path(args.out or ".")
    if out.suffix:  # a file path was given; use its directory
        out = out.parent
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model_from_config(cfg: dict):
    name = _get(cfg, "model.name", str)
    params = _get(cfg, "model.params", dict, default={})
    try:
        return make_coefficients(name, **params)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad model config: {exc}") from None


def _grid_from_config(cfg: dict) -> TimeGrid:
    horizon = _get(cfg, "grid.T", (int, float))
    steps = _get(cfg, "grid.M", int)
    try:
        return TimeGrid(float(horizon), steps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _init_from_config(cfg: dict):
    init = _get(cfg, "init", dict, default=None)
    if init is None:
        return None
    kind = _get(init, "kind", str)
    if kind == "constant":
        return float(_get(init, "value", (int, float)))
    if kind == "normal":
        mean = float(_get(init, "mean", (int, float), default=0.0))
        std = float(_get(init, "std", (int, float), default=1.0))
        return lambda rng: mean + std * rng.standard_normal()
    raise ConfigError(f"unknown init.kind {kind!r} (use 'constant' or 'normal')")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    t0 = time.perf_counter()
    coeffs = _model_from_config(cfg)
    grid = _grid_from_config(cfg)
    n = _get(cfg, "N", int, default=None)
    n_reps = _get(cfg, "n_replications", int, default=1)
    scheme = _get(cfg, "scheme", str, default=sde.SCHEME_EULER)
    seed = _seed(args, cfg)
    init = _init_from_config(cfg)
    fmt = _get(cfg, "output.format", str, default="csv")
    basename = _get(cfg, "output.basename", str, default="ensemble")
    if fmt not in ("csv", "binary", "both"):
        raise ConfigError("output.format must be 'csv', 'binary' or 'both'")

    proxy_n = _get(cfg, "proxy_N", int, default=None)
    simulate = sde.simulate_truncated if scheme == sde.SCHEME_TRUNCATED \
        else sde.simulate_particle_system
    if scheme not in (sde.SCHEME_EULER, sde.SCHEME_TRUNCATED):
        raise ConfigError(f"unknown scheme {scheme!r}")
    try:
        if proxy_n is not None:
            # solo mode: one mean-field path per replication, law argument
            # realized by a proxy cloud of proxy_N particles
            plan = NoisePlan(seed, proxy_n, grid.steps, coeffs.dim_noise)
            ensembles = []
            for rep in range(n_reps):
                path, common = sde.solo_mkv_path(coeffs, grid, init, plan, rep, proxy_n)
                ensembles.append(sde.ParticleEnsemble(
                    grid=grid, states=path[None, :, :], common_path=common,
                    scheme=scheme, replication=rep, mean_path=path.copy()))
        else:
            if n is None:
                raise ConfigError("missing required field: N")
            plan = NoisePlan(seed, n, grid.steps, coeffs.dim_noise)
            ensembles = [simulate(coeffs, grid, init, n, plan, rep)
                         for rep in range(n_reps)]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    outdir = _outdir(args)
    outputs = []
    if fmt in ("csv", "both"):
        path = outdir / f"{basename}.csv"
        sde.write_ensemble_csv(path, ensembles)
        outputs.append(path)
    if fmt in ("binary", "both"):
        path = outdir / f"{basename}.bin"
        sde.write_ensemble_binary(path, ensembles)
        outputs.append(path)
    _finish(args, "simulate", cfg, seed, outputs, t0, outdir / f"{basename}.manifest.json")
    return EXIT_OK


def cmd_convergence(args) -> int:
    cfg = _load_config(args)
    t0 = time.perf_counter()
    coeffs = _model_from_config(cfg)
    horizon = float(_get(cfg, "grid.T", (int, float)))
    m_values = _get(cfg, "M_list", list)
    m_ref = _get(cfg, "M_ref", int)
    n = _get(cfg, "N", int, default=64)
    n_reps = _get(cfg, "n_replications", int, default=1000)
    p = float(_get(cfg, "p", (int, float), default=2.0))
    seed = _seed(args, cfg)
    try:
        result = convergence.strong_rate_study(
            coeffs, horizon, m_values, m_ref, n, n_reps, p=p, master_seed=seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    outdir = _outdir(args)
    path = outdir / "convergence.csv"
    with open(path, "w", encoding="utf-8") as f:
        f.write("M,strong_error,fitted_slope\n")
        for row in result.rows():
            f.write(f"{row['M']},{sde.format_float(row['strong_error'])},"
                    f"{sde.format_float(row['fitted_slope'])}\n")
    print(f"fitted slope: {result.slope:.4f} over M={result.m_values} vs M_ref={m_ref}")
    _finish(args, "convergence", cfg, seed, [path], t0, outdir / "convergence.manifest.json")
    return EXIT_OK


def _samples_from_config(cfg: dict, key: str) -> np.ndarray:
    node = _get(cfg, key, dict)
    if "csv" in node:
        return load_samples_csv(node["csv"])[:, int(node.get("column", 0))]
    if "samples" in node:
        return np.asarray(node["samples"], dtype=float)
    raise ConfigError(f"field {key} needs either 'csv' or 'samples'")


def _probes_from_config(cfg: dict):
    node = _get(cfg, "probes", dict, default=None)
    if node is None:
        return None
    kind = _get(node, "kind", str)
    try:
        return order.ProbeFamily(kind=kind, levels=node.get("levels"),
                                 strikes=node.get("strikes"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_order_check(args) -> int:
    cfg = _load_config(args)
    t0 = time.perf_counter()
    kind = _get(cfg, "kind", str, default="cv")
    z = float(_get(cfg, "z", (int, float), default=order.DEFAULT_Z))
    n_boot = _get(cfg, "n_boot", int, default=order.DEFAULT_BOOTSTRAP)
    seed = _seed(args, cfg)
    probes = _probes_from_config(cfg)

    if kind in ("cv", "icv"):
        mu = _samples_from_config(cfg, "mu")
        nu = _samples_from_config(cfg, "nu")
        paired = bool(_get(cfg, "paired", bool, default=False))
        check = order.check_cv_1d if kind == "cv" else order.check_icv_1d
        try:
            report = check(mu, nu, probes, z, n_boot=n_boot, paired=paired, seed=seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    elif kind in ("conditional_cv", "conditional_icv"):
        grid = _grid_from_config(cfg)
        sys_x = order.SystemSpec(
            coeffs=_model_from_config({"model": _get(cfg, "system_x.model", dict)}),
            init=_init_from_config(_get(cfg, "system_x", dict)))
        sys_y = order.SystemSpec(
            coeffs=_model_from_config({"model": _get(cfg, "system_y.model", dict)}),
            init=_init_from_config(_get(cfg, "system_y", dict)))
        report = order.check_conditional(
            sys_x, sys_y, grid, kind=kind.removeprefix("conditional_"),
            probes=probes, n_common=_get(cfg, "n_common", int, default=64),
            n_particles=_get(cfg, "N", int, default=1000),
            master_seed=seed, z=z, n_boot=n_boot, seed=seed)
    else:
        raise ConfigError(f"unknown order-check kind {kind!r}")

    outdir = _outdir(args)
    json_path = outdir / "order_report.json"
    json_path.write_text(report.to_json() + "\n", encoding="utf-8")
    text_path = outdir / "order_report.txt"
    text_path.write_text(report.to_text() + "\n", encoding="utf-8")
    print(report.to_text())
    _finish(args, "order-check", cfg, seed, [json_path, text_path], t0,
            outdir / "order_report.manifest.json")
    return EXIT_VIOLATED if report.verdict == "violated" else EXIT_OK


def cmd_cfs_sweep(args) -> int:
    cfg = _load_config(args)
    t0 = time.perf_counter()
    seed = _seed(args, cfg)
    sweep_cfg = dict(cfg)
    sweep_cfg.pop("seed", None)
    sweep_cfg["master_seed"] = seed
    try:
        config = systemic.SweepConfig.from_dict(sweep_cfg)
        rows = systemic.figure1_sweep(config, workers=max(1, args.threads))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None

    out = Path(args.out or "fig1_sweep.csv")
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "fig1_sweep.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    systemic.write_sweep_csv(out, rows)
    outputs = [out]
    if args.emit_plotdata:
        outputs += [Path(p) for p in systemic.write_plot_series(str(out.with_suffix("")), rows)]
    print(f"wrote {len(rows)} sweep rows to {out}")
    _finish(args, "cfs-sweep", config.to_dict(), seed, outputs, t0,
            out.with_suffix(".manifest.json"))
    return EXIT_OK


def _gain_tables(cfg: dict, grid: TimeGrid):
    node = _get(cfg, "control", dict)
    if "csv" in node:
        table = np.loadtxt(node["csv"], delimiter=",", ndmin=2)
        if table.shape[1] < 2:
            raise ConfigError("control.csv needs two columns: gain, shift")
        return control_lq.FeedbackControl.from_tables(table[:, 0], table[:, 1], grid)
    try:
        return control_lq.FeedbackControl.from_tables(
            np.asarray(_get(node, "gain", (list, int, float)), dtype=float),
            np.asarray(_get(node, "shift", (list, int, float)), dtype=float),
            grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_lq_compare(args) -> int:
    cfg = _load_config(args)
    t0 = time.perf_counter()
    grid = _grid_from_config(cfg)
    seed = _seed(args, cfg)
    spec_cfg = dict(_get(cfg, "spec", dict))
    theta_scale = spec_cfg.pop("theta_scale", None)
    if theta_scale is not None:
        bound = float(_get(spec_cfg, "sigma_bar", (int, float))) * float(theta_scale)
        spec_cfg["theta"] = lambda t, x, mu: bound
    try:
        spec = control_lq.LqSpec(grid=grid, **spec_cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    ctrl = _gain_tables(cfg, grid)
    result = control_lq.compare_values(
        spec, ctrl,
        n_particles=_get(cfg, "N", int, default=1000),
        n_mc=_get(cfg, "n_mc", int, default=64),
        master_seed=seed,
        z=float(_get(cfg, "z", (int, float), default=3.0)),
    )
    outdir = _outdir(args)
    path = outdir / "lq_compare.json"
    path.write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(result, indent=2))
    _finish(args, "lq-compare", cfg, seed, [path], t0, outdir / "lq_compare.manifest.json")
    return EXIT_VIOLATED if result["verdict"] == "violated" else EXIT_OK


def _finish(args, subcommand, cfg, seed, outputs, t0, manifest_path) -> None:
    doc = manifest.build_manifest(
        subcommand, cfg, seed, outputs, time.perf_counter() - t0,
        extra={"threads": args.threads},
    )
    manifest.write_manifest(manifest_path, doc)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (wins over config)")
    common.add_argument("--threads", type=int,
                        default=int(os.environ.get("MKV_SIM_THREADS", "1")),
                        help="worker count for embarrassingly parallel cells")
    common.add_argument("--out", type=str, default=None, help="output directory (or CSV path for cfs-sweep)")
    common.add_argument("--config", type=str, default=None, help="JSON config document")

    parser = argparse.ArgumentParser(
        prog="mkvsim",
        description="Mean-field SDE simulation with common noise: order tests and experiments",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    sub.add_parser("simulate", parents=[common],
                   help="run the particle system, export ensembles").set_defaults(fn=cmd_simulate)
    sub.add_parser("convergence", parents=[common],
                   help="strong-rate study on a benchmark model").set_defaults(fn=cmd_convergence)
    sub.add_parser("order-check", parents=[common],
                   help="convex / increasing-convex order tests").set_defaults(fn=cmd_order_check)
    sweep = sub.add_parser("cfs-sweep", parents=[common],
                           help="interbank ESD sweep over (variant, N, a)")
    sweep.add_argument("--emit-plotdata", action="store_true",
                       help="also write one series file per variant")
    sweep.set_defaults(fn=cmd_cfs_sweep)
    sub.add_parser("lq-compare", parents=[common],
                   help="LQ cost comparison under a supplied feedback").set_defaults(fn=cmd_lq_compare)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except sde.SimulationBlowupError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
