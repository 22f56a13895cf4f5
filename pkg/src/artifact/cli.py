"""Command line entry point: trace, gff, explore, verify.

Every flag mirrors a key of an optional JSON config file (dashes become
underscores).  Values from the file win over flags given on the command line,
with a warning.  The master seed falls back to $LEVELLINE_SEED, then to 1.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import click
import numpy as np
from click.core import ParameterSource

from . import __version__
from .verify import write_atomic

SEED_ENV = "LEVELLINE_SEED"


def _positive(key, v):
    if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
        raise click.UsageError(f"config key {key!r} must be a positive number, got {v!r}")


def _unit_open(key, v):
    if not (isinstance(v, (int, float)) and 0 < v < 1):
        raise click.UsageError(f"config key {key!r} must lie in (0, 1), got {v!r}")


def _min_int(lo):
    def check(key, v):
        if not (isinstance(v, int) and not isinstance(v, bool) and v >= lo):
            raise click.UsageError(f"config key {key!r} must be an integer >= {lo}, got {v!r}")
    return check


def _choice(*opts):
    def check(key, v):
        if v not in opts:
            raise click.UsageError(f"config key {key!r} must be one of {list(opts)}, got {v!r}")
    return check


def _string(key, v):
    if not isinstance(v, str):
        raise click.UsageError(f"config key {key!r} must be a string, got {v!r}")


def _number(key, v):
    if not (isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)):
        raise click.UsageError(f"config key {key!r} must be a finite number, got {v!r}")


def _coerce_float(key, v):
    return float(v) if isinstance(v, int) and not isinstance(v, bool) else v


_COMMON = {"seed": _min_int(0), "out": _string, "workers": _min_int(1)}

SCHEMAS = {
    "trace": {**_COMMON, "weights": _string, "horizon": _positive, "dt": _positive, "n_samples": _min_int(1)},
    "gff": {**_COMMON, "grid": _min_int(2), "boundary": _string, "u": _number},
    "explore": {**_COMMON, "kind": _choice("tree", "bubble", "timed"), "grid": _min_int(4), "r": _unit_open,
                "targets": _string, "eps": _positive, "delta": _positive, "k": _min_int(1), "dt": _positive},
    "verify": {**_COMMON, "suite": _string},
}

FLOAT_KEYS = {"horizon", "dt", "u", "r", "eps", "delta"}


def resolve_config(ctx: click.Context, command: str, flags: dict, config_path: str | None) -> dict:
    """Merge flags with an optional config file, validate every key, settle the seed."""
    schema = SCHEMAS[command]
    cfg = dict(flags)
    if config_path:
        try:
            with open(config_path) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise click.UsageError(f"cannot read config file {config_path}: {exc}")
        if not isinstance(file_cfg, dict):
            raise click.UsageError("config file must hold a JSON object")
        for key, val in file_cfg.items():
            if key not in schema:
                raise click.UsageError(f"unknown config key {key!r} for {command}")
            if ctx.get_parameter_source(key) == ParameterSource.COMMANDLINE and flags.get(key) != val:
                click.echo(f"warning: config file overrides --{key.replace('_', '-')}", err=True)
            cfg[key] = val
    if cfg.get("seed") is None:
        env = os.environ.get(SEED_ENV)
        try:
            cfg["seed"] = int(env) if env else 1
        except ValueError:
            raise click.UsageError(f"{SEED_ENV} must be an integer, got {env!r}")
    for key, val in cfg.items():
        if key in FLOAT_KEYS:
            cfg[key] = val = _coerce_float(key, val)
        schema[key](key, val)
    return cfg


def _header(command: str, cfg: dict) -> dict:
    return {"command": command, "version": __version__, "config": json.dumps(cfg, sort_keys=True)}


def _csv(header: dict, columns, rows) -> str:
    buf = io.StringIO()
    for k, v in sorted(header.items()):
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def _json(header: dict, body: dict) -> str:
    return json.dumps({"header": header, **body}, sort_keys=True, indent=1) + "\n"


def _emit(paths):
    for p in paths:
        click.echo(p)


def _parse_targets(text: str) -> list[complex]:
    out = []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        try:
            out.append(complex(item.replace(" ", "").replace("i", "j")))
        except ValueError:
            raise click.UsageError(f"config key 'targets': cannot parse {item!r}; expected x+yj")
    if not out:
        raise click.UsageError("config key 'targets' needs at least one point")
    return out


def _parse_boundary(text: str):
    if text in ("zero", "plusminus"):
        return text
    try:
        return float(text)
    except ValueError:
        raise click.UsageError(f"config key 'boundary' must be zero, plusminus or a number, got {text!r}")


# ---------------------------------------------------------------- commands


def _one_trace(args):
    from .loewner import chordal_trace
    from .sle_process import sample_chordal_driver

    force, horizon, dt, seed = args
    d = sample_chordal_driver(force, horizon, seed, dt)
    drv = d.driver
    if d.threshold_time is not None:
        drv = drv.restrict(d.threshold_time)
    tr = chordal_trace(drv)
    return d, tr


@click.group()
@click.version_option(__version__)
def main():
    """Simulate SLE_4 level lines, lattice free fields and CLE_4 loops; run the verification suites."""


def _common(f):
    f = click.option("--config", "config_path", type=click.Path(dir_okay=False),
                     help="JSON file with any of this command's keys; its values win over flags.")(f)
    f = click.option("--workers", type=int, default=1, show_default=True,
                     help="Worker processes for independent replicas.")(f)
    f = click.option("--seed", type=int, default=None,
                     help=f"Master seed (falls back to ${SEED_ENV}, then 1).")(f)
    return f


@main.command()
@click.option("--weights", default="", show_default=True,
              help="Force points as 'L:rho@x,R:rho@x'; an empty string is plain SLE_4.")
@click.option("--horizon", type=float, default=1.0, show_default=True, help="Capacity time to run to.")
@click.option("--dt", type=float, default=1e-3, show_default=True, help="Driver time step.")
@click.option("--n-samples", type=int, default=1, show_default=True, help="Number of independent traces.")
@click.option("--out", default="trace", show_default=True, help="Output prefix.")
@_common
@click.pass_context
def trace(ctx, weights, horizon, dt, n_samples, out, seed, workers, config_path):
    """Chordal SLE_4(rho) drivers and traces: PREFIX_driver.csv, PREFIX_trace.csv, PREFIX.svg."""
    from .plotting import trace_svg
    from .sle_process import ConfigError, ForceConfig

    cfg = resolve_config(ctx, "trace", dict(weights=weights, horizon=horizon, dt=dt, n_samples=n_samples,
                                            out=out, seed=seed, workers=workers), config_path)
    try:
        force = ForceConfig.parse(cfg["weights"])
    except ConfigError as exc:
        raise click.UsageError(f"config key 'weights': {exc}")
    seeds = np.random.SeedSequence(cfg["seed"]).spawn(cfg["n_samples"])
    jobs = [(force, cfg["horizon"], cfg["dt"], s) for s in seeds]
    if cfg["workers"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg["workers"]) as pool:
            results = list(pool.map(_one_trace, jobs))
    else:
        results = [_one_trace(j) for j in jobs]
    hdr = _header("trace", cfg)
    names = sorted(results[0][0].tracks)
    drows, trows = [], []
    for i, (d, tr) in enumerate(results):
        tracks = [d.tracks[k] for k in names]
        for j, t in enumerate(d.driver.times):
            drows.append([i, t, d.driver.values[j]] + [tk[j] for tk in tracks])
        for t, p in zip(tr.times, tr.points):
            trows.append([i, t, p.real, p.imag])
    p = cfg["out"]
    write_atomic(p + "_driver.csv", _csv(hdr, ["sample", "t", "W"] + names, drows))
    write_atomic(p + "_trace.csv", _csv(hdr, ["sample", "t", "x", "y"], trows))
    write_atomic(p + ".svg", trace_svg(results[0][0].driver.times, [d.driver.values for d, _ in results],
                                       [tr.points for _, tr in results], hdr))
    _emit([p + "_driver.csv", p + "_trace.csv", p + ".svg"])


@main.command()
@click.option("--grid", type=int, default=64, show_default=True, help="Interior sites per side of the square.")
@click.option("--boundary", default="plusminus", show_default=True,
              help="zero, plusminus (-LAMBDA left half, +LAMBDA right half) or a constant.")
@click.option("--u", type=float, default=0.0, show_default=True, help="Height of the extracted level line.")
@click.option("--out", default="gff", show_default=True, help="Output prefix.")
@_common
@click.pass_context
def gff(ctx, grid, boundary, u, out, seed, workers, config_path):
    """Lattice free field on a square plus its bottom-to-top level line: PREFIX_field.csv, PREFIX_path.csv, PREFIX.svg."""
    from . import gff as g
    from .plotting import field_svg

    cfg = resolve_config(ctx, "gff", dict(grid=grid, boundary=boundary, u=u, out=out, seed=seed, workers=workers),
                         config_path)
    n = cfg["grid"]
    dom = g.square_domain(n, _parse_boundary(cfg["boundary"]))
    field = g.sample_dgff(dom, cfg["seed"])
    cyc = dom.cycle
    mid = (n + 1) // 2
    x = cyc.nearest_straight(cyc.index_near((0, mid)))
    y = cyc.nearest_straight(cyc.index_near((n + 1, mid)))
    try:
        path = g.extract_level_line(field, x, y, cfg["u"])
    except (g.ExtractionError, g.HeightConfigError) as exc:
        raise click.UsageError(f"config key 'u': {exc}")
    hdr = {**_header("gff", cfg), "path_status": path.status}
    rows, cols = dom.shape
    frows = [[r, c, field.values[r, c], int(dom.mask[r, c])] for r in range(rows) for c in range(cols)]
    pts = path.points(dom)
    prow = [[k, X, Y, p.real, p.imag] for k, ((X, Y), p) in enumerate(zip(path.vertices.tolist(), pts))]
    p = cfg["out"]
    write_atomic(p + "_field.csv", _csv(hdr, ["row", "col", "value", "interior"], frows))
    write_atomic(p + "_path.csv", _csv(hdr, ["step", "X2", "Y2", "x", "y"], prow))
    write_atomic(p + ".svg", field_svg(field, [path], hdr))
    _emit([p + "_field.csv", p + "_path.csv", p + ".svg"])


@main.command()
@click.option("--kind", type=click.Choice(["tree", "bubble", "timed"]), default="tree", show_default=True,
              help="tree: lattice upward sequences to several targets; bubble: bubble process to the first "
                   "surrounding loop; timed: CLE_4 loop with its time label.")
@click.option("--grid", type=int, default=128, show_default=True, help="Lattice size for --kind tree.")
@click.option("--r", type=float, default=0.5, show_default=True, help="Height step fraction for --kind tree.")
@click.option("--targets", default="0.5+0.5j", show_default=True,
              help="';'-separated points; the unit square for tree, the unit disc otherwise (first used).")
@click.option("--eps", type=float, default=0.05 * math.pi / 2, show_default=True, help="Bubble height offset.")
@click.option("--delta", type=float, default=0.01, show_default=True, help="Bubble size cutoff.")
@click.option("--k", type=int, default=6, show_default=True, help="Level for --kind timed (r = 2^-k).")
@click.option("--dt", type=float, default=1e-3, show_default=True, help="Driver time step.")
@click.option("--out", default="explore", show_default=True, help="Output prefix.")
@_common
@click.pass_context
def explore(ctx, kind, grid, r, targets, eps, delta, k, dt, out, seed, workers, config_path):
    """Loops and exploration trees: PREFIX.json and PREFIX.svg."""
    from . import cle4, gff as g, levelline_interior as li
    from .plotting import loops_svg

    cfg = resolve_config(ctx, "explore", dict(kind=kind, grid=grid, r=r, targets=targets, eps=eps, delta=delta,
                                              k=k, dt=dt, out=out, seed=seed, workers=workers), config_path)
    pts = _parse_targets(cfg["targets"])
    hdr = _header("explore", cfg)
    if cfg["kind"] == "tree":
        dom = g.square_domain(cfg["grid"], "zero")
        for t in pts:
            if not (0 < t.real < 1 and 0 < t.imag < 1):
                raise click.UsageError(f"config key 'targets': {t} is outside the unit square")
        field = g.sample_dgff(dom, cfg["seed"])
        try:
            res = li.exploration_tree(cfg["r"], pts, mode="lattice", field=field)
        except li.ConfigError as exc:
            raise click.UsageError(f"config key 'targets': {exc}")
        body = res.export()
        loops = [lp for s in res.sequences for lp in s.loops]
        disc = False
    else:
        z = pts[0]
        if abs(z) >= 1:
            raise click.UsageError(f"config key 'targets': {z} is outside the unit disc")
        if cfg["kind"] == "bubble":
            res = cle4.run_bubble_process(z, cfg["seed"], cfg["eps"], cfg["delta"], cfg["dt"], with_loop=True)
            loops = [res.final_loop] if res.final_loop is not None else []
        else:
            res = cle4.cle4_timed_loop(z, cfg["seed"], k_max=cfg["k"], with_loop=True)
            loops = [res.loop] if res.loop is not None else []
        body = res.export()
        pts = [z]
        disc = True
    p = cfg["out"]
    write_atomic(p + ".json", _json(hdr, {"result": body}))
    write_atomic(p + ".svg", loops_svg(loops, pts, hdr, disc=disc))
    _emit([p + ".json", p + ".svg"])


@main.command()
@click.option("--suite", default="core", show_default=True, help="core, smoke, extended, empty, or comma-separated check names.")
@click.option("--out", default="verify", show_default=True, help="Output prefix for PREFIX.csv and PREFIX.json.")
@_common
@click.pass_context
def verify(ctx, suite, out, seed, workers, config_path):
    """Run a verification suite; exit status 1 if any check fails."""
    from . import checks
    from .verify import bonferroni_note, run_matrix, write_reports

    cfg = resolve_config(ctx, "verify", dict(suite=suite, out=out, seed=seed, workers=workers), config_path)
    s = cfg["suite"]
    if s in checks.SUITES:
        names = checks.suite_names(s)
    else:
        names = [x.strip() for x in s.split(",") if x.strip()]
        unknown = [x for x in names if x not in checks.REGISTRY]
        if unknown:
            raise click.UsageError(f"config key 'suite': unknown checks {unknown}")
    reports = run_matrix(names, cfg["seed"], cfg["workers"])
    for rep in reports:
        click.echo(rep.line())
    note = bonferroni_note(reports)
    if note:
        click.echo(note)
    _emit(write_reports(reports, cfg["out"], _header("verify", cfg)))
    sys.exit(0 if all(r.passed for r in reports) else 1)


if __name__ == "__main__":
    main()
