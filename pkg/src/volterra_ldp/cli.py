"""Command-line front end.

Usage::

    volterra-ldp {cov,limits,rate,probe,fit-speed} --config run.yaml [--out DIR]
                 [--seed N] [--paper-literal-coefficients] [--h PATH]

Exit codes: 0 success (non-converged ladders are flagged, not fatal),
2 configuration or validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .asymptotics import (
    EpsilonLadder,
    LimitLaw,
    closed_form_limits,
    limit_cond_cov_estimate,
    limit_cov_estimate,
    limit_cross_estimate,
    limit_kernel_estimate,
    limit_path_cov_estimate,
    speed_exponent_fit,
)
from .conditioning import FunctionalConditionalLaw, PathConditionalLaw
from .config import RunConfig, load_config
from .exceptions import NumericalError, UnsupportedExampleError, ValidationError
from .ldp import RateQuery, ldp_probe, rate_functional
from .models import Brownian, FBm, IntegratedVolterra, MFoldIBM, ProcessModel

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _read_two_columns(path: Path, names):
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or any(n not in reader.fieldnames for n in names):
                raise ValidationError(f"{path}: expected columns {names}, got {reader.fieldnames}")
            rows = [(float(r[names[0]]), float(r[names[1]])) for r in reader]
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric entry ({exc})") from exc
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    a, b = zip(*rows)
    return np.array(a), np.array(b)


def _example_for(model: ProcessModel) -> Optional[str]:
    fam = model.kernel
    if isinstance(fam, FBm):
        return "fbm" if fam.H > 0.5 else None
    if isinstance(fam, MFoldIBM):
        return "mfold"
    if isinstance(fam, IntegratedVolterra):
        return "integrated"
    if isinstance(fam, Brownian):
        return "brownian"
    return None


def _gamma_for(cfg: RunConfig, model: ProcessModel) -> float:
    if cfg.limits.gamma_exp is not None:
        return cfg.limits.gamma_exp
    fam = model.kernel
    if isinstance(fam, FBm):
        return fam.H
    if isinstance(fam, Brownian):
        return 0.5
    return 1.0


def _kind_for(cfg: RunConfig) -> str:
    if cfg.limits.kind is not None:
        return cfg.limits.kind
    return {"none": "base", "functional": "functional", "path": "path"}[cfg.conditioning.mode]


def _closed_form(cfg: RunConfig, model, gset, kind) -> Optional[LimitLaw]:
    example = cfg.limits.example or _example_for(model)
    if example is None:
        return None
    try:
        return closed_form_limits(example, model, gset, kind, cfg.paper_literal_coefficients)
    except UnsupportedExampleError:
        if cfg.limits.example is not None:
            raise
        return None


def _functional_law(cfg: RunConfig, model):
    gset = cfg.build_gset()
    if gset is None:
        raise ValidationError("conditioning.functions is empty")
    return FunctionalConditionalLaw(model, gset, cfg.tolerances.quad, cfg.tolerances.cond_bound)


def _path_law(cfg: RunConfig, model):
    u, psi = _read_two_columns(cfg.resolve(cfg.conditioning.psi_csv), ("u", "psi"))
    return PathConditionalLaw(model, u, psi, cfg.paper_literal_coefficients, cfg.tolerances.quad)


def cmd_cov(cfg: RunConfig, out: Path) -> Path:
    model = cfg.build_model()
    grid = np.asarray(cfg.grids.cov, dtype=float)
    mode = cfg.conditioning.mode
    if mode == "functional":
        cov = _functional_law(cfg, model).cov
    elif mode == "path":
        cov = _path_law(cfg, model).cov
    else:
        cov = lambda t, s: float(model.covariance(t, s))
    rows = []
    for i, t in enumerate(grid):
        for s in grid[i:]:
            rows.append((t, s, cov(float(t), float(s))))
    path = out / "cov.csv"
    _write_csv(path, ("t", "s", "value"), rows)
    return path


def cmd_limits(cfg: RunConfig, out: Path) -> Path:
    model = cfg.build_model()
    gset = cfg.build_gset()
    gamma = _gamma_for(cfg, model)
    ladder = EpsilonLadder(tuple(cfg.ladder.values))
    rtol = cfg.tolerances.ladder_rtol
    base_cf = _closed_form(cfg, model, gset, "base")
    func_cf = _closed_form(cfg, model, gset, "functional") if gset is not None else None
    path_cf = _closed_form(cfg, model, gset, "path")
    law = None
    if gset is not None and "kbar_g" in cfg.limits.quantities:
        law = FunctionalConditionalLaw(model, gset, cfg.tolerances.quad, cfg.tolerances.cond_bound)
    rows = []

    def emit(name, t, s, est, closed):
        for e, r in est.rows():
            rows.append((e, name, t, s, r, closed, est.converged))

    for t, s in cfg.limits.points:
        q = cfg.limits.quantities
        if "kbar" in q:
            cf = float(base_cf.kbar(t, s)) if base_cf else None
            emit("kbar", t, s, limit_cov_estimate(model, gamma, t, s, ladder, rtol), cf)
        if "rbar" in q and gset is not None:
            for i, g in enumerate(gset.functions):
                cf = None
                if base_cf is not None and base_cf.rbar is not None:
                    cf = float(np.asarray(base_cf.rbar(t))[i])
                emit(f"rbar{i + 1}", t, None, limit_cross_estimate(model, g, gamma, t, ladder, rtol), cf)
        if "Kbar" in q and s <= t:
            cf = float(base_cf.kernel_limit(t, s)) if base_cf and base_cf.kernel_limit else None
            emit("Kbar", t, s, limit_kernel_estimate(model, gamma, t, s, ladder, rtol), cf)
        if "kbar_g" in q and law is not None:
            cf = float(func_cf.kbar(t, s)) if func_cf else None
            emit("kbar_g", t, s, limit_cond_cov_estimate(law, gamma, t, s, ladder, rtol), cf)
        if "upsilon" in q:
            cf = float(path_cf.kbar(t, s)) if path_cf else None
            emit("upsilon", t, s, limit_path_cov_estimate(model, gamma, t, s, ladder, rtol), cf)
    path = out / "limits.csv"
    _write_csv(path, ("eps", "quantity", "t", "s", "ratio", "closed_form", "converged"), rows)
    return path


def cmd_rate(cfg: RunConfig, out: Path, h_path: Optional[str] = None) -> Path:
    model = cfg.build_model()
    gset = cfg.build_gset()
    kind = _kind_for(cfg)
    limit = _closed_form(cfg, model, gset, kind)
    src = h_path or cfg.rate.h_csv
    if src is None:
        raise ValidationError("rate needs an h CSV (rate.h_csv or --h)")
    hp = Path(src) if h_path else cfg.resolve(src)
    grid, h = _read_two_columns(hp, ("t", "h"))
    if limit is None:
        limit = LimitLaw.from_ladder(model, _gamma_for(cfg, model), grid, kind, gset,
                                     EpsilonLadder(tuple(cfg.ladder.values)),
                                     cfg.paper_literal_coefficients)
    res = rate_functional(RateQuery(limit, grid, h), cfg.tolerances.rel_cutoff,
                          cfg.tolerances.residual_threshold)
    path = out / "rate.json"
    _write_json(path, res.to_dict())
    return path


def cmd_probe(cfg: RunConfig, out: Path) -> Path:
    model = cfg.build_model()
    mode = cfg.conditioning.mode
    if mode == "functional":
        law = _functional_law(cfg, model)
    elif mode == "path":
        law = _path_law(cfg, model)
    else:
        law = model
    gamma = _gamma_for(cfg, model)
    limit = _closed_form(cfg, model, cfg.build_gset(), _kind_for(cfg))
    n = cfg.grids.probe_points
    if n < 1:
        raise ValidationError("grids.probe_points must be positive")
    grid = np.arange(1, n + 1) / n
    p = cfg.probe
    eps = tuple(cfg.ladder.values)
    deltas = None
    if p.threshold_scaling == "self_similar":
        deltas = [p.delta * e**gamma for e in eps]
    report = ldp_probe(law, gamma, eps, p.delta, grid, p.N, cfg.seed, limit=limit,
                       block=p.block, workers=p.workers, deltas=deltas)
    path = out / "probe.csv"
    report.to_csv(path)
    return path


def cmd_fit_speed(cfg: RunConfig, out: Path) -> Path:
    slope, r2 = speed_exponent_fit(cfg.build_model(), EpsilonLadder(tuple(cfg.ladder.values)))
    path = out / "speed.json"
    _write_json(path, {"slope": slope, "r2": r2})
    return path


COMMANDS = {
    "cov": cmd_cov,
    "limits": cmd_limits,
    "rate": cmd_rate,
    "probe": cmd_probe,
    "fit-speed": cmd_fit_speed,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="volterra-ldp", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, metavar="PATH")
    parser.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    parser.add_argument("--seed", type=int, metavar="N", help="overrides the config seed")
    parser.add_argument("--paper-literal-coefficients", action="store_true",
                        help="alpha_tilde^2 weight on the kernel-limit term and alpha^2 in the path mean")
    parser.add_argument("--h", metavar="PATH", help="h CSV for the rate command (columns t,h)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ValidationError("--seed must be non-negative")
            cfg.seed = args.seed
        if args.paper_literal_coefficients:
            cfg.paper_literal_coefficients = True
        out = Path(args.out) if args.out else cfg.resolve(cfg.output.dir)
        out.mkdir(parents=True, exist_ok=True)
        fn = COMMANDS[args.command]
        path = fn(cfg, out, args.h) if args.command == "rate" else fn(cfg, out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
