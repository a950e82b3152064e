"""Command-line entry point.

    rbsde-lab rbsde solve   --instance inst.json --scenario const:0.04 --out sol.csv
    rbsde-lab soref solve   --instance inst.json --a-grid 0.01,0.05,0.09 --out so.json
    rbsde-lab price american --market mkt.json --band 0.01:0.09 --out price.json
    rbsde-lab glab doob-meyer --instance inst.json --input surface.csv --n 16,64,256
    rbsde-lab glab downcross --paths paths.csv --band 0.5:1.5
    rbsde-lab verify run --suite all --seed 42 --report report.json

Exit status: 0 on success, 1 when a solver fails or a verification check
fails, 2 for malformed input or configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import glab, pricing, serialize, soref, verify
from .errors import NumericalFailure, RbsdeLabError
from .lattice import build_lattice
from .model import TimeGrid, UncertaintyInterval, load_instance, validate_instance
from .rbsde import Scenario, solve_penalized, solve_rbsde


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    instance: str | None = None
    output: str | None = None
    overrides: dict = field(default_factory=dict)


def _floats(text: str, sep: str = ",") -> list:
    try:
        return [float(v) for v in text.split(sep) if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected numbers separated by {sep!r}, got {text!r}") from exc


def _band(text: str) -> tuple:
    vals = _floats(text, ":")
    if len(vals) != 2:
        raise ConfigError(f"band must look like low:high, got {text!r}")
    return vals[0], vals[1]


def _scenario(text: str, interval) -> Scenario:
    if text in ("low", "high"):
        return Scenario.constant(interval.a_low if text == "low" else interval.a_high, text)
    kind, _, val = text.partition(":")
    if kind != "const" or not val:
        raise ConfigError(f"scenario must be const:<rate>, low or high; got {text!r}")
    return Scenario.constant(_floats(val)[0], text)


def _instance(cfg: RunConfig):
    try:
        inst = load_instance(cfg.instance)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read instance {cfg.instance!r}: {exc}") from exc
    N = cfg.overrides.get("N")
    if N is not None:
        inst = inst.replace(grid=TimeGrid(inst.grid.T, int(N)))
    lattice = build_lattice(inst.grid, inst.interval, inst.x0, cfg.overrides.get("width"))
    rep = validate_instance(inst, lattice)
    if not rep.conforming:
        raise ConfigError("instance rejected: " + "; ".join(rep.violations))
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return inst, lattice


def _write(path, obj) -> None:
    if path:
        serialize.write_json(path, obj)


def _surface_rows(t, x, *surfaces):
    for i, ti in enumerate(t):
        for j, xj in enumerate(x):
            row = [float(ti), float(xj)]
            for s in surfaces:
                row.append(float(s[i, j]) if i < s.shape[0] else float("nan"))
            yield row


# ---------------------------------------------------------------------------
# commands

def cmd_rbsde_solve(args, cfg: RunConfig) -> dict:
    inst, lattice = _instance(cfg)
    sc = _scenario(args.scenario, inst.interval)
    if args.penalty is not None:
        sol = solve_penalized(inst, lattice, sc, args.penalty)
    else:
        sol = solve_rbsde(inst, lattice, sc)
    if cfg.output:
        serialize.write_csv(cfg.output, ["t", "x", "y", "z", "k_cum"], sol.rows())
    return {"y0": sol.y0, "skorohod_residual": sol.skorohod_residual,
            "max_picard_iters": int(sol.picard_iters.max())}


def cmd_soref_solve(args, cfg: RunConfig) -> dict:
    inst, lattice = _instance(cfg)
    a_grid = _floats(args.a_grid) if args.a_grid else None
    if args.family:
        # the maximiser feedback is always added, so "dpp-star" is accepted and skipped
        family = [_scenario(s, inst.interval) for s in args.family.split(",")
                  if s.strip() and s.strip() != "dpp-star"]
    else:
        family = [Scenario.constant(a) for a in (a_grid or inst.interval.default_grid())]
    so = soref.solve_2rbsde_dpp(inst, lattice, a_grid, family)
    out = {"Y0": so.Y0, "a_grid": list(so.a_grid),
           "min_condition_gap": so.min_condition_gap,
           "min_condition_argmin": so.min_condition_argmin,
           "contact_set_mismatch": so.contact_set_mismatch,
           "occupancy": so.occupancy(),
           "scenarios": {n: {"y0": r.y0, "K_minus_k": r.K_minus_k_terminal}
                         for n, r in so.records.items()}}
    _write(cfg.output, out)
    if args.surface:
        serialize.write_csv(args.surface, ["t", "x", "Y", "Z", "a_star"],
                            _surface_rows(so.t, so.x, so.Y, so.Z, so.a_star))
    return {"Y0": so.Y0, "min_condition_gap": so.min_condition_gap}


def cmd_price_american(args, cfg: RunConfig) -> dict:
    try:
        mkt, grid = pricing.load_market(args.market)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read market {args.market!r}: {exc}") from exc
    if cfg.overrides.get("N"):
        grid = TimeGrid(grid.T, int(cfg.overrides["N"]))
    lo, hi = _band(args.band)
    iv = UncertaintyInterval(lo, hi)
    a_grid = _floats(args.a_grid) if args.a_grid else None
    rep = pricing.price_american(mkt, iv, grid, a_grid, eps=args.eps)
    out = rep.to_dict()
    out["issues"] = pricing.check_report(rep)
    _write(cfg.output, out)
    return {"price": rep.price, "hedge0": rep.hedge0,
            "dominance_violations": rep.dominance_violations}


def _load_surface(path, inst, lattice):
    try:
        header, data = serialize.read_csv(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read surface {path!r}: {exc}") from exc
    col = "Y" if "Y" in header else "y"
    if not {"t", "x", col} <= set(header):
        raise ConfigError("surface CSV needs columns t, x and y (or Y)")
    N, M = inst.grid.N, lattice.n_nodes
    if data.shape[0] != (N + 1) * M:
        raise ConfigError(f"surface has {data.shape[0]} rows, lattice needs {(N + 1) * M}")
    x = data[:M, header.index("x")]
    if not np.allclose(x, lattice.x_nodes, rtol=0, atol=1e-12):
        raise ConfigError("surface x column does not match the instance lattice")
    return data[:, header.index(col)].reshape(N + 1, M)


def cmd_glab_doob_meyer(args, cfg: RunConfig) -> dict:
    inst, lattice = _instance(cfg)
    Y = _load_surface(args.input, inst, lattice)
    sc = _scenario(args.scenario, inst.interval)
    dm = glab.doob_meyer(Y, inst, lattice, sc, _floats(args.n))
    out = dm.summary()
    _write(cfg.output, out)
    return {"V_T": out["V_T_penalized"][-1], "residual": dm.reconstruction_residual,
            "disjoint": dm.disjoint}


def cmd_glab_downcross(args, cfg: RunConfig) -> dict:
    band = _band(args.band)
    if args.paths:
        try:
            _, paths = serialize.read_csv(args.paths)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read paths {args.paths!r}: {exc}") from exc
        rep = glab.downcrossing_bound_experiment(band, paths=paths, mu=args.mu)
    else:
        rep = glab.downcrossing_bound_experiment(band, args.n_paths, seed=args.seed, mu=args.mu)
    _write(cfg.output, rep.to_dict())
    return {"mean": rep.mean, "bound": rep.bound, "passed": rep.passed}


def cmd_verify_run(args, cfg: RunConfig) -> dict:
    sizes = {}
    for item in (args.sizes or "").split(","):
        if item.strip():
            k, _, v = item.partition("=")
            try:
                sizes[k.strip()] = int(v)
            except ValueError as exc:
                raise ConfigError(f"size override must be key=int, got {item!r}") from exc
    rep = verify.run_suite(args.suite, args.seed, sizes, deterministic=args.deterministic)
    _write(cfg.output, rep.to_dict())
    failed = [c.name for c in rep.checks if not c.passed]
    return {"checks": len(rep.checks), "failed": failed, "_exit": 0 if rep.passed else 1}


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbsde-lab", description="Lattice solvers for reflected "
                                "and second-order reflected BSDEs.")
    p.add_argument("--deterministic", action="store_true",
                   help="run every suite serially (fixed reduction order)")
    top = p.add_subparsers(dest="group", required=True)

    def common(sp, instance=True):
        if instance:
            sp.add_argument("--instance", required=True)
            sp.add_argument("--N", type=int, help="override the number of time steps")
            sp.add_argument("--width", type=float, default=6.0,
                            help="lattice half-width in standard deviations")
        sp.add_argument("--out", dest="out")

    g = top.add_parser("rbsde").add_subparsers(dest="cmd", required=True)
    s = g.add_parser("solve")
    common(s)
    s.add_argument("--scenario", default="high")
    s.add_argument("--penalty", type=float)
    s.set_defaults(fn=cmd_rbsde_solve)

    g = top.add_parser("soref").add_subparsers(dest="cmd", required=True)
    s = g.add_parser("solve")
    common(s)
    s.add_argument("--a-grid")
    s.add_argument("--family", help="comma-separated scenarios, e.g. const:0.01,dpp-star")
    s.add_argument("--surface", help="write Y, Z and a_star surfaces to this CSV")
    s.set_defaults(fn=cmd_soref_solve)

    g = top.add_parser("price").add_subparsers(dest="cmd", required=True)
    s = g.add_parser("american")
    s.add_argument("--market", required=True)
    s.add_argument("--band", required=True)
    s.add_argument("--a-grid")
    s.add_argument("--eps", type=float, default=0.01)
    s.add_argument("--N", type=int)
    s.add_argument("--out", dest="out")
    s.set_defaults(fn=cmd_price_american)

    g = top.add_parser("glab").add_subparsers(dest="cmd", required=True)
    s = g.add_parser("doob-meyer")
    common(s)
    s.add_argument("--input", required=True)
    s.add_argument("--scenario", default="high")
    s.add_argument("--n", default="16,64,256")
    s.set_defaults(fn=cmd_glab_doob_meyer)
    s = g.add_parser("downcross")
    s.add_argument("--paths")
    s.add_argument("--band", required=True)
    s.add_argument("--mu", type=float, default=0.0)
    s.add_argument("--n-paths", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", dest="out")
    s.set_defaults(fn=cmd_glab_downcross)

    g = top.add_parser("verify").add_subparsers(dest="cmd", required=True)
    s = g.add_parser("run")
    s.add_argument("--suite", default="all")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--sizes", help="comma-separated key=int overrides")
    s.add_argument("--report", dest="out")
    s.set_defaults(fn=cmd_verify_run)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    cfg = RunConfig(f"{args.group} {args.cmd}", getattr(args, "instance", None),
                    getattr(args, "out", None),
                    {k: getattr(args, k) for k in ("N", "width") if getattr(args, k, None)})
    start = time.perf_counter()
    try:
        summary = args.fn(args, cfg)
    except (ConfigError, ValueError) as exc:
        # library ValueErrors are invalid instances, domain or contraction errors
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, RbsdeLabError, FloatingPointError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    code = summary.pop("_exit", 0)
    parts = [f"{k}={serialize.fmt_float(v) if isinstance(v, float) else v}"
             for k, v in summary.items()]
    parts.append(f"runtime={time.perf_counter() - start:.2f}s")
    print(f"{cfg.command}: " + " ".join(parts))
    return code


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
