"""Command-line entry point: detection, scaling scans, flat norms.

Configuration files are flat key=value text with repeated `atom=` lines
(weight@x,y).  Exit codes: 0 success, 1 usage or config error, 2 domain or
admissibility error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .energy import CGConvergenceError
from .gamma import ScanAssertionError, ScanConfig, grid_for, run_scan
from .geometry import Domain, Point2, Rect
from .grid_field import (FieldConstructionError, load_field,
                         make_recovery_field)
from .measures import (AtomicMeasure, flat_distance_atomic, load_atoms_csv,
                       save_atoms_csv)
from .simplex import SimplexError
from .singularities import DetectError, detect

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DOMAIN = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


def parse_eps_token(tok: str) -> float:
    tok = tok.strip()
    if "^" in tok:
        base, exp = tok.split("^")
        return float(base) ** float(exp)
    return float(tok)


def parse_config(path) -> dict:
    """key=value lines; `atom=` may repeat; '#' starts a comment."""
    cfg = {"atoms": []}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, val = line.split("=", 1)
            key = key.strip()
            val = val.strip()
            if key == "atom":
                try:
                    w, xy = val.split("@")
                    x, y = xy.split(",")
                    cfg["atoms"].append((Point2(float(x), float(y)), float(w)))
                except ValueError as e:
                    raise ConfigError(f"{path}:{lineno}: bad atom spec {val!r}") from e
            else:
                cfg[key] = val
    return cfg


def domain_from_config(cfg: dict) -> Domain:
    rect = Rect(*[float(t) for t in cfg.get("domain", "0,0,1,1").split(",")])
    margin = float(cfg.get("inner_margin", "0.15"))
    inner = Rect(rect.x1_min + margin, rect.x2_min + margin,
                 rect.x1_max - margin, rect.x2_max - margin)
    tilde = hat = None
    if cfg.get("mode") == "dirichlet":
        tm = float(cfg.get("tilde_margin", str(1.5 * margin)))
        hm = float(cfg.get("hat_margin", str(0.5 * margin)))
        tilde = Rect(rect.x1_min + tm, rect.x2_min + tm,
                     rect.x1_max - tm, rect.x2_max - tm)
        hat = Rect(rect.x1_min - hm, rect.x2_min - hm,
                   rect.x1_max + hm, rect.x2_max + hm)
    return Domain(rect, inner, tilde, hat)


def eps_list_from_config(cfg: dict, override: str | None) -> list:
    if override:
        return [parse_eps_token(t) for t in override.split(",")]
    if "eps" in cfg:
        return [parse_eps_token(t) for t in cfg["eps"].split(",")]
    if "eps_pow_first" in cfg and "eps_pow_last" in cfg:
        a = int(cfg["eps_pow_first"])
        b = int(cfg["eps_pow_last"])
        return [2.0 ** -p for p in range(a, b + 1)]
    raise ConfigError("no eps specification (eps= or eps_pow_first/last=)")


def cmd_detect(args) -> int:
    cfg = parse_config(args.config) if args.config else {"atoms": []}
    if args.seed is not None:
        cfg["seed"] = str(args.seed)
    out = Path(args.out or "detect_out")
    out.mkdir(parents=True, exist_ok=True)
    if "field" in cfg:
        u = load_field(cfg["field"])
        eps = parse_eps_token(args.eps or cfg.get("eps", ""))
    else:
        domain = domain_from_config(cfg)
        eps = parse_eps_token(args.eps or cfg.get("eps", ""))
        R = float(cfg.get("R", "0.2"))
        grid = grid_for(eps, domain)
        u = make_recovery_field(AtomicMeasure(cfg["atoms"]), eps, R, grid, domain)
    mu_hat, diag = detect(u, eps)
    save_atoms_csv(mu_hat, out / "atoms.csv")
    with open(out / "diagnostics.json", "w") as fh:
        json.dump(diag, fh, indent=1, sort_keys=True)
    print(f"detected {len(mu_hat.atoms)} atoms, total variation "
          f"{sum(abs(w) for _, w in mu_hat.atoms):g}; wrote {out}/atoms.csv")
    return EXIT_OK


def cmd_gamma_scan(args) -> int:
    cfg = parse_config(args.config)
    domain = domain_from_config(cfg)
    eps_list = eps_list_from_config(cfg, args.eps)
    scan = ScanConfig(
        domain=domain,
        mu=AtomicMeasure(cfg["atoms"]),
        eps_list=eps_list,
        R=float(cfg.get("R", "0.2")),
        mode=cfg.get("mode", "recovery"),
        lp_grid_n=int(args.grid or cfg.get("lp_grid", "49")),
        seed=int(args.seed if args.seed is not None else cfg.get("seed", "0")),
        dipole_pairs=int(cfg.get("dipole_pairs", "0")),
        twist_amp=float(cfg.get("twist_amp", "0")),
        compute_flat=cfg.get("compute_flat", "1") not in ("0", "false", "no"),
    )
    report = run_scan(scan)
    out = Path(args.out or "scan")
    report.to_csv(out.with_suffix(".csv"))
    report.to_json(out.with_suffix(".json"))
    last = report.rows[-1]
    print(f"wrote {out.with_suffix('.csv')} ({len(report.rows)} rows); final "
          f"F_eps/|log eps| = {last.ratio:.6g}, flat distance = {last.flat_muhat:.6g}")
    return EXIT_OK


def cmd_flatnorm(args) -> int:
    mu = load_atoms_csv(args.measure_a)
    nu = load_atoms_csv(args.measure_b)
    cfg = parse_config(args.config) if args.config else {"atoms": []}
    domain = domain_from_config(cfg)
    res = flat_distance_atomic(mu, nu, domain)
    print(f"flat distance = {res.value:.12g} (alpha={res.alpha:.6g}, "
          f"beta={res.beta:.6g})")
    out = Path(args.out or "witness.csv")
    diff = (mu - nu).merged()
    with open(out, "w") as fh:
        fh.write("x,y,phi\n")
        for (p, _), v in zip(diff.atoms, res.witness):
            fh.write(f"{p.x1:.17g},{p.x2:.17g},{v:.17g}\n")
    print(f"wrote witness {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="vortexkit",
        description="S1-field toolkit: detection, scaling scans, flat norms")
    sub = ap.add_subparsers(dest="cmd", required=True)

    d = sub.add_parser("detect", help="run the singularity detection pipeline")
    d.add_argument("--config", help="field file or generator spec (key=value)")
    d.add_argument("--eps", help="core scale, e.g. 2^-8")
    d.add_argument("--grid", help="unused for detect; accepted for symmetry")
    d.add_argument("--seed", type=int)
    d.add_argument("--out", help="output directory")
    d.set_defaults(fn=cmd_detect)

    g = sub.add_parser("gamma-scan", help="run an eps scan and write CSV/JSON")
    g.add_argument("--config", required=True)
    g.add_argument("--eps", help="override eps list, comma separated")
    g.add_argument("--grid", help="LP grid nodes per side")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output path prefix")
    g.set_defaults(fn=cmd_gamma_scan)

    f = sub.add_parser("flatnorm", help="flat distance between two atom CSVs")
    f.add_argument("measure_a")
    f.add_argument("measure_b")
    f.add_argument("--config")
    f.add_argument("--out", help="witness CSV path")
    f.set_defaults(fn=cmd_flatnorm)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as e:
        if isinstance(e, (FieldConstructionError,)):
            print(f"error: {e}", file=sys.stderr)
            return EXIT_DOMAIN
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DetectError, ScanAssertionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except (CGConvergenceError, SimplexError, ArithmeticError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
