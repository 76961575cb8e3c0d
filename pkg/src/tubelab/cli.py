"""Command-line experiment runner.

Exit codes: 0 success, 1 usage or input error, 2 grid budget refused.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from .errors import BudgetExceeded, DomainError
from .estimate import ExponentProfile, evaluate, squid_profile, sweep
from .family import density_stats, read_family, write_family
from .gen import generate
from .geom import Tube
from .raster import GridSpec, box_count, default_scales, fit_dimension, load_snapshot, union_field
from .raster.grid import DEFAULT_BUDGET_CELLS
from .structure import (
    TwoEndsParams,
    best_slab_search,
    bilinear_split,
    cordoba_l2,
    hairbrush,
    plate_number,
    two_ends_check,
)

DEFAULT_DELTAS = "2**-4,2**-5,2**-6,2**-7"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- helpers -------------------------------------------------------------------

def atomic_write(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def parse_number(text) -> float:
    """Float, fraction 'a/b' or power '2**-k'."""
    if isinstance(text, (int, float)):
        return float(text)
    s = str(text).strip()
    try:
        if "**" in s:
            base, exp = s.split("**", 1)
            return float(base) ** float(exp)
        if "/" in s:
            a, b = s.split("/", 1)
            return float(a) / float(b)
        return float(s)
    except ValueError as exc:
        raise UsageError(f"not a number: {text!r}") from exc


def parse_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [parse_number(t) for t in text]
    return [parse_number(t) for t in str(text).split(",") if t.strip()]


def parse_profile(tokens, n: int) -> ExponentProfile:
    if isinstance(tokens, str):
        tokens = tokens.split()
    tokens = list(tokens or ["squid"])
    if tokens == ["squid"]:
        return squid_profile(n)
    if tokens[0] == "custom" and len(tokens) == 2:
        return ExponentProfile.parse(tokens[1])
    raise UsageError("--profile takes 'squid' or 'custom p,q,r,alpha'")


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _emit(report: dict, out) -> None:
    text = _json(report)
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _sidecar(out, suffix: str):
    return Path(out).with_suffix(suffix) if out else None


def _gnuplot(rows, columns) -> str:
    lines = ["# " + " ".join(columns)]
    lines += [" ".join(repr(float(r[c])) for c in columns) for r in rows]
    return "\n".join(lines) + "\n"


# -- configuration ----------------------------------------------------------------

# flag defaults applied after the config file, so that flags > config > defaults
DEFAULTS = {
    "n": 3,
    "delta": 2.0**-5,
    "cell": None,
    "profile": ["squid"],
    "epsilon": 0.0,
    "seed": None,
    "budget_cells": DEFAULT_BUDGET_CELLS,
    "out": None,
    "deltas": DEFAULT_DELTAS,
    "scales": None,
    "sigma": None,
    "stem": 0,
    "slack": 1,
    "c0": 0.25,
    "N": 10,
    "twoends_slack": 2.0,
    "thetas": None,
    "search_budget": 256,
}


def resolve(args) -> argparse.Namespace:
    config = {}
    if getattr(args, "config", None):
        try:
            config = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(config, dict):
            raise UsageError("config must be a JSON object")
        config = {k.replace("-", "_"): v for k, v in config.items()}
    for key, default in DEFAULTS.items():
        if getattr(args, key, None) is None:
            setattr(args, key, config.get(key, default))
    if getattr(args, "spec", None) is None and "spec" in config:
        args.spec = config["spec"]
    args.n = int(args.n)
    args.delta = parse_number(args.delta)
    args.epsilon = parse_number(args.epsilon)
    if args.cell is not None:
        args.cell = parse_number(args.cell)
    args.budget_cells = int(parse_number(args.budget_cells))
    return args


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with default values for any flag")
    p.add_argument("--n", type=int, help="ambient dimension (default 3)")
    p.add_argument("--delta", help="tube radius, e.g. 2**-5")
    p.add_argument("--cell", help="voxel side (default delta/2)")
    p.add_argument("--profile", nargs="+", help="'squid' or 'custom p,q,r,alpha'")
    p.add_argument("--epsilon", help="epsilon in the right-hand side exponent")
    p.add_argument("--seed", type=int, help="generator seed")
    p.add_argument("--budget-cells", dest="budget_cells", help="refuse grids with more cells")
    p.add_argument("--out", help="output path (stdout when omitted)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tubelab", description="Discretized x-ray experiments on tube families.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a family file from a generator spec")
    _common(p)
    p.add_argument("spec", nargs="?", help="generator spec, e.g. bush:count=5")

    p = sub.add_parser("eval", help="evaluate both sides of the estimate for a family")
    _common(p)
    p.add_argument("family")

    p = sub.add_parser("sweep", help="evaluate a generator over several deltas")
    _common(p)
    p.add_argument("spec", nargs="?")
    p.add_argument("--deltas", help=f"comma-separated dyadic deltas (default {DEFAULT_DELTAS})")

    p = sub.add_parser("structure", help="structural analysis of a family")
    _common(p)
    p.add_argument("family")
    p.add_argument("kind", choices=["plate", "brush", "twoends", "bilinear", "cordoba", "slab"])
    p.add_argument("--sigma", help="hairbrush angle (default 1/4)")
    p.add_argument("--stem", type=int, help="index of the stem line (default 0)")
    p.add_argument("--slack", type=int, help="hairbrush dyadic slack (default 1)")
    p.add_argument("--c0", help="bilinear separation constant (default 1/4)")
    p.add_argument("--N", type=int, help="two-ends ball exponent (default 10)")
    p.add_argument("--twoends-slack", dest="twoends_slack", help="two-ends slack factor (default 2)")
    p.add_argument("--thetas", help="slab thicknesses (default dyadic delta .. 1/4)")
    p.add_argument("--search-budget", dest="search_budget", type=int, help="plate search seeds")

    p = sub.add_parser("dim", help="box-counting dimension of a family union or field")
    _common(p)
    p.add_argument("source", help="family file or field snapshot")
    p.add_argument("--scales", help="comma-separated dyadic box sides (default 4 delta .. 1/4)")
    return parser


# -- commands -----------------------------------------------------------------------

def cmd_gen(args) -> int:
    if not args.spec:
        raise UsageError("gen needs a generator spec")
    spec = args.spec
    if args.seed is not None:
        spec = spec + ("," if ":" in spec else ":") + f"seed={args.seed}"
    fam = generate(spec, args.delta, args.n)
    if args.out:
        write_family(fam, args.out)
    else:
        from .family import format_family

        sys.stdout.write(format_family(fam))
    return 0


def cmd_eval(args) -> int:
    fam = read_family(args.family)
    profile = parse_profile(args.profile, fam.n)
    rep = evaluate(fam, profile, args.epsilon, cell=args.cell, budget=args.budget_cells)
    _emit(rep.to_dict(), args.out)
    if args.out:
        atomic_write(_sidecar(args.out, ".csv"), rep.csv_text())
    return 0 if math.isfinite(rep.ratio) else 1


def cmd_sweep(args) -> int:
    if not args.spec:
        raise UsageError("sweep needs a generator spec")
    spec = args.spec
    if args.seed is not None:
        spec = spec + ("," if ":" in spec else ":") + f"seed={args.seed}"
    profile = parse_profile(args.profile, args.n)
    cell_factor = args.cell / args.delta if args.cell is not None else 0.5
    rep = sweep(spec, parse_list(args.deltas), profile, args.epsilon, args.n, cell_factor, args.budget_cells)
    _emit(rep.to_dict(), args.out)
    if args.out:
        atomic_write(_sidecar(args.out, ".csv"), rep.csv_text())
        atomic_write(_sidecar(args.out, ".dat"), _gnuplot(rep.sweep, ["delta", "lhs", "rhs", "ratio"]))
    else:
        sys.stdout.write(rep.csv_text())
    if rep.partial:
        print(f"sweep stopped early: {rep.error}", file=sys.stderr)
        return 2 if "budget" in (rep.error or "") else 1
    return 0


def _union(fam, args):
    spec = GridSpec.standard(fam.n, fam.delta, args.cell)
    return union_field(fam, spec, args.budget_cells)


def cmd_structure(args) -> int:
    fam = read_family(args.family)
    if len(fam) == 0:
        raise DomainError("empty family")
    params = {"kind": args.kind, "n": fam.n, "delta": fam.delta, "family_size": len(fam), "seed": args.seed or 0}
    if args.kind == "plate":
        res = plate_number(fam, search_budget=int(args.search_budget), seed=args.seed or 0)
        out = res.to_dict()
    elif args.kind == "brush":
        sigma = parse_number(args.sigma) if args.sigma is not None else 0.25
        stem = fam.line(int(args.stem))
        sub = hairbrush(fam, stem, sigma, int(args.slack))
        params.update(sigma=sigma, stem=int(args.stem), slack=int(args.slack))
        out = {"size": len(sub), "indices": [fam.index_of(l) for l in sub.lines]}
    elif args.kind == "twoends":
        E = _union(fam, args)
        stats = density_stats(fam, E)
        tp = TwoEndsParams(int(args.N), args.epsilon, parse_number(args.twoends_slack))
        ok = [two_ends_check(Tube(l, fam.delta), E, tp, stats.lam) for l in fam.lines]
        params.update(N=tp.N, epsilon=tp.epsilon, slack=tp.slack)
        out = {"lambda": stats.lam, "passing": int(sum(ok)), "failing": [i for i, v in enumerate(ok) if not v]}
    elif args.kind == "bilinear":
        profile = parse_profile(args.profile, fam.n)
        res = bilinear_split(fam, parse_number(args.c0), profile, args.cell)
        params.update(c0=parse_number(args.c0), profile=profile.to_dict())
        out = res.to_dict()
    elif args.kind == "cordoba":
        out = cordoba_l2(fam, cell=args.cell, budget=args.budget_cells).to_dict()
    else:
        E = _union(fam, args)
        thetas = parse_list(args.thetas) if args.thetas else [
            fam.delta * 2.0**k for k in range(int(round(math.log2(0.25 / fam.delta))) + 1)
        ]
        out = best_slab_search(E, thetas, fam).to_dict()
        params["thetas"] = thetas
    params["cell"] = args.cell if args.cell is not None else fam.delta / 2.0
    _emit({"params": params, "result": out}, args.out)
    return 0


def cmd_dim(args) -> int:
    path = Path(args.source)
    try:
        head = path.read_bytes()[:8]
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    if head == b"TLFIELD1":
        field = load_snapshot(path)
        delta = field.spec.cell
    else:
        fam = read_family(path)
        if len(fam) == 0:
            raise DomainError("empty family")
        field = _union(fam, args)
        delta = fam.delta
    cell = field.spec.cell
    if args.scales:
        scales = parse_list(args.scales)
    else:
        scales = default_scales(cell, delta)
    if len(scales) < 3:
        raise UsageError("box counting needs at least 3 scales")
    for s in scales:
        k = math.log2(s)
        if abs(k - round(k)) > 1e-9:
            raise UsageError(f"scale {s} is not dyadic")
    counts = box_count(field, scales)
    slope = fit_dimension(counts)
    rows = [{"scale": s, "count": c} for s, c in counts]
    _emit({"params": {"source": path.name, "n": field.spec.n, "cell": cell, "scales": scales}, "counts": rows, "dimension": slope}, args.out)
    if args.out:
        csv = "scale,count\n" + "".join(f"{s!r},{c}\n" for s, c in counts)
        atomic_write(_sidecar(args.out, ".csv"), csv)
        atomic_write(_sidecar(args.out, ".dat"), _gnuplot(rows, ["scale", "count"]))
    return 0


COMMANDS = {"gen": cmd_gen, "eval": cmd_eval, "sweep": cmd_sweep, "structure": cmd_structure, "dim": cmd_dim}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = resolve(args)
        return COMMANDS[args.command](args)
    except BudgetExceeded as exc:
        print(f"tubelab: {exc}", file=sys.stderr)
        return 2
    except (UsageError, DomainError, ValueError, OSError, KeyError) as exc:
        print(f"tubelab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
