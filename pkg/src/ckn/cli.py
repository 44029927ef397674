"""Command-line interface: ``ckn <command> [options]``.

Exit codes: 0 success, 1 a verification failed, 2 usage or domain error,
3 numeric non-convergence.  Output goes to stdout in the chosen
``--format``; commands that produce plot data also write CSV files to
``--out`` (default: the ``CKN_OUTPUT_DIR`` environment variable, if set).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .core import make_params, sharp_constant, unit_ball_volume
from .errors import ConvergenceError, DomainError, InsufficientDataError, ParseError
from .minkowski import parse_norm
from .mmspace import resolve_space
from .qengine import (IDENTITY_TOL, default_lambda_grid, default_rho_grid, q_e,
                      growth_pipeline, verify_euclidean_identity)
from .symmetrize import (check_hardy_littlewood, check_polya_szego, random_grid_function,
                         smooth_test_functions, symmetrize)
from .variational import (initial_profile, minimize_quotient, minimizer_grid, resolution_study,
                          save_profile, save_trace, verify_extremal)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NONCONVERGENCE = 0, 1, 2, 3
SCALING_TOL = 1e-8
EXTREMAL_TOL = 1e-4


@dataclass
class Outcome:
    """What a command hands back to :func:`main` for printing."""

    payload: dict
    passed: bool = True
    table: Optional[str] = None
    rows: Optional[list] = None        # for --format csv: list of dicts
    files: dict = field(default_factory=dict)
    failed_checks: list = field(default_factory=list)


# -- argument helpers -------------------------------------------------------------

def _grid(text: str):
    """``lo:hi:count`` in log10 units, e.g. ``-2:2:41``."""
    try:
        lo, hi, count = text.split(":")
        return np.logspace(float(lo), float(hi), int(count))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI:COUNT (log10), got {text!r}") from None


def _c_value(text: str):
    if text.lower() in ("ka", "k_a", "k"):
        return "Ka"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--C expects a number or 'Ka', got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("--C must be positive")
    return value


def _common(p: argparse.ArgumentParser, n_default: Optional[int] = 3):
    p.add_argument("--n", type=int, default=n_default, help="dimension (>= 3)")
    p.add_argument("--a", type=float, default=0.0, help="weight parameter, 0 <= a < 1")
    p.add_argument("--format", choices=("json", "csv", "table"), default="table")
    p.add_argument("--out", default=os.environ.get("CKN_OUTPUT_DIR"),
                   help="directory for CSV plot data (default $CKN_OUTPUT_DIR)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ckn", description=(
        "Sharp Caffarelli-Kohn-Nirenberg constants, volume-growth checks and "
        "symmetrization tests."))
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("constant", help="print K_a, p, ap and omega_n")
    _common(p)
    p.add_argument("--precision", choices=("double", "extended"), default="double")

    p = sub.add_parser("verify", help="run one verification suite")
    p.add_argument("kind", choices=("identity", "scaling", "extremal", "symmetrize", "hl", "ps"))
    _common(p)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--lambda-grid", type=_grid, default=None,
                   help="log10 LO:HI:COUNT (default -1:1:41)")
    p.add_argument("--nodes", type=int, default=2000, help="extremal sampling nodes")
    p.add_argument("--norm", default="euclidean", help="euclidean, lq:4, l4, JSON or file")
    p.add_argument("--fn", default="all", help="test function name, 'bump' or 'all'")
    p.add_argument("--m", type=int, default=64, help="cells per axis")
    p.add_argument("--count", type=int, default=10, help="random functions for hl")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("growth", help="volume-growth pipeline on a space")
    _common(p, n_default=None)
    p.add_argument("--space", required=True,
                   help="euclidean:3, cylinder:3, minkowski:lq:4:3, quartic_mix:3:0.5, "
                        "profile:PATH")
    p.add_argument("--C", dest="C", type=_c_value, default="Ka")
    p.add_argument("--C0", dest="C0", type=float, default=1.0)
    p.add_argument("--lambda-grid", type=_grid, default=None, help="log10 LO:HI:COUNT")
    p.add_argument("--rho-grid", type=_grid, default=None, help="log10 LO:HI:COUNT")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--svg", action="store_true", help="also write SVG plots to --out")

    p = sub.add_parser("minimize", help="minimize the radial quotient")
    _common(p)
    p.add_argument("--init", default="random",
                   help="random, gaussian, plateau or extremal:<lambda>")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--iters", type=int, default=3000)
    p.add_argument("--nodes", type=int, default=400)
    return parser


def _params(args):
    if args.n is None:
        raise DomainError("--n is required")
    return make_params(args.n, args.a)


# -- commands -----------------------------------------------------------------------

def cmd_constant(args) -> Outcome:
    params = _params(args)
    K = sharp_constant(params, precision=args.precision).value
    payload = {"n": params.n, "a": params.a, "p": params.p, "ap": params.ap, "K": K,
               "K_inverse": 1.0 / K, "omega_n": unit_ball_volume(params.n)}
    table = "\n".join([
        f"n       {params.n}",
        f"a       {params.a:g}",
        f"p       {params.p:.12g}",
        f"ap      {params.ap:.12g}",
        f"K_a     {K:.12g}",
        f"1/K_a   {1.0 / K:.12g}",
        f"omega_n {unit_ball_volume(params.n):.12g}",
    ])
    return Outcome(payload, table=table, rows=[payload])


def _verify_identity(args, params) -> Outcome:
    grid = default_lambda_grid(-1, 1, 41) if args.lambda_grid is None else args.lambda_grid
    rep = verify_euclidean_identity(params, grid)
    rows = [{"lambda": l, "lhs": a, "rhs": b, "residual": r}
            for l, a, b, r in zip(rep.lambda_grid, rep.lhs, rep.rhs, rep.residuals)]
    payload = {"check": "identity", "params": params.as_dict(), "max_residual": rep.max_residual,
               "tolerance": IDENTITY_TOL, "rhs_positive": rep.rhs_positive,
               "passed": rep.passes, "rows": rows}
    table = (f"identity  n={params.n} a={params.a:g}  max residual {rep.max_residual:.3e} "
             f"(tol {IDENTITY_TOL:g})  {'PASS' if rep.passes else 'FAIL'}")
    return Outcome(payload, rep.passes, table, rows,
                   failed_checks=[] if rep.passes else ["identity"])


def _verify_scaling(args, params) -> Outcome:
    grid = default_lambda_grid(-1, 1, 41) if args.lambda_grid is None else args.lambda_grid
    q1 = q_e(params, 1.0).value
    rows = []
    for lam in grid:
        q = q_e(params, float(lam)).value
        pred = lam ** params.scaling_exp * q1
        rows.append({"lambda": float(lam), "q": q, "predicted": pred, "residual": abs(q - pred) / q})
    worst = max(r["residual"] for r in rows)
    ok = worst <= SCALING_TOL
    payload = {"check": "scaling", "params": params.as_dict(), "exponent": params.scaling_exp,
               "max_residual": worst, "tolerance": SCALING_TOL, "passed": ok, "rows": rows}
    table = (f"scaling  n={params.n} a={params.a:g}  exponent {params.scaling_exp:.6g}  "
             f"max residual {worst:.3e} (tol {SCALING_TOL:g})  {'PASS' if ok else 'FAIL'}")
    return Outcome(payload, ok, table, rows, failed_checks=[] if ok else ["scaling"])


def _verify_extremal(args, params) -> Outcome:
    chk = verify_extremal(params, args.lam, args.nodes)
    study = [c.as_dict() for c in resolution_study(params, args.lam,
                                                   sorted({50, 200, 1000, args.nodes}))]
    ok = chk.gap <= EXTREMAL_TOL
    payload = {"check": "extremal", "params": params.as_dict(), **chk.as_dict(),
               "tolerance": EXTREMAL_TOL, "passed": ok, "resolution_study": study}
    lines = [f"extremal  n={params.n} a={params.a:g} lambda={args.lam:g}  quotient "
             f"{chk.quotient:.10g} vs 1/K_a {chk.target:.10g}  gap {chk.gap:.3e} "
             f"(tol {EXTREMAL_TOL:g})  {'PASS' if ok else 'FAIL'}", "  nodes        gap"]
    lines += [f"  {s['nodes']:5d}  {s['gap']:.3e}" for s in study]
    return Outcome(payload, ok, "\n".join(lines), study, failed_checks=[] if ok else ["extremal"])


def _suite(args, norm):
    names = None
    if args.fn != "all":
        names = ("radial_bump",) if args.fn == "bump" else (args.fn,)
    found = list(smooth_test_functions(norm, m=args.m, names=names))
    if not found:
        raise DomainError(f"unknown test function {args.fn!r}")
    return found


def _verify_symmetrize(args, params) -> Outcome:
    norm = parse_norm(args.norm, params.n)
    rows, failed = [], []
    for name, u in _suite(args, norm):
        star = symmetrize(u)
        again = symmetrize(star)
        levels = np.unique(u.values)
        preserved = all(int(np.count_nonzero(u.values > c)) == int(np.count_nonzero(star.values > c))
                        for c in levels)
        idem = bool(np.array_equal(again.values, star.values))
        ok = preserved and idem
        if not ok:
            failed.append(name)
        rows.append({"function": name, "measure_preserved": preserved, "idempotent": idem,
                     "passed": ok})
    payload = {"check": "symmetrize", "norm": norm.spec(), "m": args.m, "rows": rows,
               "passed": not failed}
    table = "\n".join(f"{r['function']:<16} measure {'ok' if r['measure_preserved'] else 'BAD'}  "
                      f"idempotent {'ok' if r['idempotent'] else 'BAD'}" for r in rows)
    return Outcome(payload, not failed, table, rows, failed_checks=failed)


def _verify_hl(args, params) -> Outcome:
    norm = parse_norm(args.norm, params.n)
    rows, failed = [], []
    for k in range(args.count):
        u = random_grid_function(norm, m=args.m, seed=args.seed + k)
        r = check_hardy_littlewood(params, u)
        if not r.holds:
            failed.append(f"seed {args.seed + k}")
        rows.append({"seed": args.seed + k, "lhs": r.lhs, "rhs": r.rhs, "holds": r.holds})
    payload = {"check": "hl", "params": params.as_dict(), "norm": norm.spec(), "m": args.m,
               "rows": rows, "passed": not failed}
    table = "\n".join(f"seed {r['seed']:4d}  lhs {r['lhs']:.12g}  rhs {r['rhs']:.12g}  "
                      f"{'PASS' if r['holds'] else 'FAIL'}" for r in rows)
    return Outcome(payload, not failed, table, rows, failed_checks=failed)


def _verify_ps(args, params) -> Outcome:
    norm = parse_norm(args.norm, params.n)
    rows, failed = [], []
    for name, u in _suite(args, norm):
        r = check_polya_szego(params, u)
        if not r.holds_within_tol:
            failed.append(name)
        rows.append({"function": name, "energy_star": r.lhs, "energy": r.rhs,
                     "margin": r.margin, "passed": r.holds_within_tol})
    payload = {"check": "ps", "norm": norm.spec(), "m": args.m, "tolerance": 0.02, "rows": rows,
               "passed": not failed}
    table = "\n".join(f"{r['function']:<16} E(u*) {r['energy_star']:.8g}  E(u) {r['energy']:.8g}  "
                      f"margin {r['margin']:+.4f}  {'PASS' if r['passed'] else 'FAIL'}"
                      for r in rows)
    return Outcome(payload, not failed, table, rows, failed_checks=failed)


def cmd_verify(args) -> Outcome:
    params = _params(args)
    return {"identity": _verify_identity, "scaling": _verify_scaling,
            "extremal": _verify_extremal, "symmetrize": _verify_symmetrize,
            "hl": _verify_hl, "ps": _verify_ps}[args.kind](args, params)


def cmd_growth(args) -> Outcome:
    space = resolve_space(args.space, seed=args.seed)
    n = args.n if args.n is not None else space.dim_hint
    if not n:
        raise DomainError("--n is required for profile spaces")
    if args.n is not None and space.dim_hint and args.n != space.dim_hint:
        raise DomainError(f"--n {args.n} does not match the space dimension {space.dim_hint}")
    params = make_params(n, args.a)
    C = sharp_constant(params).value if args.C == "Ka" else args.C
    rep = growth_pipeline(space, params, C, args.C0, lambda_grid=args.lambda_grid,
                          rho_grid=args.rho_grid)
    payload = rep.to_dict()
    payload["C_input"] = args.C if args.C == "Ka" else float(args.C)
    files = {}
    if args.out:
        for path in rep.write_csvs(args.out):
            files[os.path.basename(path)] = path
        if args.svg:
            files.update(_growth_svgs(rep, args.out))
    failed = [s.name for s in rep.stages if not s.passed]
    rows = [{"lambda": l, "q_tilde": qt, "q": q, "gap": g} for l, qt, q, g in rep.lambda_rows]
    return Outcome(payload, rep.passed, rep.to_table(), rows, files, failed)


def cmd_minimize(args) -> Outcome:
    params = _params(args)
    init = initial_profile(params, args.init, seed=args.seed, grid=minimizer_grid(args.nodes))
    res = minimize_quotient(params, init, seed=args.seed, iters=args.iters)
    target = sharp_constant(params).inverse
    payload = {"params": params.as_dict(), "init": args.init, "seed": args.seed,
               "iters": args.iters, "iterations": res.iterations, "converged": res.converged,
               "quotient": res.quotient, "target": target,
               "relative_gap": (res.quotient - target) / target}
    files = {}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        files["trace.csv"] = os.path.join(args.out, "trace.csv")
        files["profile.csv"] = os.path.join(args.out, "profile.csv")
        save_trace(res.trace, files["trace.csv"])
        save_profile(res.profile, files["profile.csv"])
    table = (f"minimize  n={params.n} a={params.a:g} init={args.init} seed={args.seed}\n"
             f"  iterations {res.iterations}  converged {res.converged}\n"
             f"  quotient {res.quotient:.10g}  1/K_a {target:.10g}  "
             f"relative gap {payload['relative_gap']:+.3e}")
    rows = [{"iter": it, "quotient": q, "step": s} for it, q, s in res.trace]
    return Outcome(payload, True, table, rows, files)


# -- plotting -------------------------------------------------------------------------

def svg_line_plot(series, path, title="", xlabel="", ylabel="", logx=True, logy=True):
    """Write a minimal SVG line plot; ``series`` is a list of (label, xs, ys)."""
    W, H, pad = 640, 420, 60
    tx = (lambda v: math.log10(v)) if logx else float
    ty = (lambda v: math.log10(v)) if logy else float
    pts = [[(tx(x), ty(y)) for x, y in zip(xs, ys) if (x > 0 or not logx) and (y > 0 or not logy)]
           for _, xs, ys in series]
    allx = [p[0] for s in pts for p in s] or [0.0, 1.0]
    ally = [p[1] for s in pts for p in s] or [0.0, 1.0]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def sx(v):
        return pad + (v - x0) / (x1 - x0) * (W - 2 * pad)

    def sy(v):
        return H - pad - (v - y0) / (y1 - y0) * (H - 2 * pad)

    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>',
           f'<text x="{W / 2}" y="{pad / 2}" text-anchor="middle">{title}</text>',
           f'<text x="{W / 2}" y="{H - 15}" text-anchor="middle">{xlabel}</text>',
           f'<text x="15" y="{H / 2}" transform="rotate(-90 15 {H / 2})" '
           f'text-anchor="middle">{ylabel}</text>']
    for k, ((label, _, _), s) in enumerate(zip(series, pts)):
        c = colours[k % len(colours)]
        poly = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in s)
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{poly}"/>')
        out.append(f'<text x="{W - pad - 120}" y="{pad + 18 * (k + 1)}" fill="{c}">{label}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
    return path


def _growth_svgs(rep, outdir) -> dict:
    lam = [r[0] for r in rep.lambda_rows]
    rho = [r[0] for r in rep.rho_rows]
    a = os.path.join(outdir, "comparison.svg")
    b = os.path.join(outdir, "volume.svg")
    svg_line_plot([("Q-tilde", lam, [r[1] for r in rep.lambda_rows]),
                   ("q", lam, [r[2] for r in rep.lambda_rows])], a,
                  title=rep.space, xlabel="lambda", ylabel="Q")
    svg_line_plot([("mu(B)", rho, [r[1] for r in rep.rho_rows]),
                   ("lower bound", rho, [r[2] for r in rep.rho_rows])], b,
                  title=rep.space, xlabel="rho", ylabel="volume")
    return {"comparison.svg": a, "volume.svg": b}


# -- output ------------------------------------------------------------------------------

def _render(outcome: Outcome, fmt: str) -> str:
    if fmt == "json":
        body = dict(outcome.payload)
        if outcome.files:
            body["files"] = dict(sorted(outcome.files.items()))
        return json.dumps(_plain(body), indent=2, sort_keys=True, allow_nan=False)
    if fmt == "csv":
        rows = outcome.rows or [outcome.payload]
        keys = list(rows[0].keys())
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _csv_cell(r.get(k)) for k in keys})
        return buf.getvalue().rstrip("\n")
    text = outcome.table or json.dumps(_plain(outcome.payload), indent=2, sort_keys=True)
    if outcome.files:
        text += "\n" + "\n".join(f"wrote {p}" for _, p in sorted(outcome.files.items()))
    return text


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (dict, list)):
        return json.dumps(_plain(v), sort_keys=True)
    return v


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


COMMANDS = {"constant": cmd_constant, "verify": cmd_verify, "growth": cmd_growth,
            "minimize": cmd_minimize}


_VALUE_FLAGS = ("--lambda-grid", "--rho-grid", "--lambda", "--a")


def _attach_values(argv):
    """Join ``--flag -1:1:5`` into ``--flag=-1:1:5`` so argparse does not read
    a negative log-exponent as an option."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok in _VALUE_FLAGS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(_attach_values(sys.argv[1:] if argv is None else argv))
    try:
        outcome = COMMANDS[args.command](args)
    except ConvergenceError as exc:
        print(f"ckn: non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except InsufficientDataError as exc:
        print(f"ckn: insufficient data: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, ParseError) as exc:
        print(f"ckn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"ckn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(_render(outcome, args.format))
    if not outcome.passed:
        print(f"ckn: verification failed: {', '.join(outcome.failed_checks) or args.command}",
              file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
