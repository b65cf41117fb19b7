"""Command-line front end: ``orthofield <subcommand> [options]``."""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import approximation as ap
from . import criteria as cr
from . import exactsys as ex
from . import lattice as lt
from . import mcharness as mc
from .config import (
    ConfigError,
    as_index,
    field_from,
    get_float,
    get_index,
    get_int,
    get_int_list,
    get_str,
    load_config,
    lookup,
)
from .fieldmodels import InnovationSpec, LinearFieldSpec, OrthoMDSpec, exact_embed
from .lattice import Box

log = logging.getLogger("orthofield")

SEED_ENV = "ORTHOFIELD_SEED"

FIELD_KEYS = [
    ("field.kind", "-", "linear", "linear | orthomd | volterra"),
    ("field.dimension", "-", "required (orthomd: 1)", "lattice dimension d, 1..4"),
    ("field.coefficients", "-", "[{index=0, value=1}]", "list of {index=[..], value=x}; f = Σ a_i ε_{-i}"),
    ("field.pairs", "-", "none", "volterra only: list of {i=[..], j=[..], value=x}"),
    ("field.modulation", "-", "none", "orthomd only: none | sign, m = ε_0·v(ε_{-1})"),
    ("field.scale", "field units", "1.0", "orthomd only: multiplier of m"),
    ("field.innovation.law", "-", "standard-normal", "standard-normal | rademacher | centered-uniform"),
    ("field.innovation.sd", "field units", "1.0", "innovation standard deviation"),
]

COMMAND_KEYS: Dict[str, List[tuple]] = {
    "check": FIELD_KEYS + [
        ("check.n_max", "sites per axis", "64", "truncation point of the reported partial sums (≥ 4)"),
    ],
    "decompose": FIELD_KEYS + [
        ("decompose.system", "path", "none", "system JSON {d, weights, perms, partition[, function]}"),
        ("decompose.function", "-", "system 'function' or indicator of atom 0", "one value per atom"),
        ("decompose.center", "-", "true", "subtract the weighted mean before decomposing"),
        ("decompose.n_max", "sites per axis", "64", "partial-sum scan range for the boundedness check"),
        ("decompose.radius", "sites", "1", "embedding radius when no system is given (rademacher field)"),
    ],
    "approx": FIELD_KEYS + [
        ("approx.k", "block size", "[1, 2, 4, 8, 16]", "ascending list of k"),
        ("approx.n", "sites per axis", "64", "window [1, n]"),
        ("approx.reps", "replications", "1000", "Monte Carlo replications"),
    ],
    "inequality": FIELD_KEYS + [
        ("inequality.n", "sites per axis", "32", "doob: window [1, n]"),
        ("inequality.reps", "replications", "2000 (doob) / 500 (dyadic)", "Monte Carlo replications"),
        ("inequality.E", "-", "[]", "dyadic: direction set, 1-based axes"),
        ("inequality.n_dyadic", "log2 sites per axis", "6", "dyadic: largest exponent"),
        ("inequality.K1", "-", "6.0", "dyadic: base constant K(1)"),
        ("inequality.C1", "-", "6.0", "dyadic: base constant C(1,{1})"),
    ],
    "fclt": FIELD_KEYS + [
        ("fclt.n", "sites per axis", "64", "window [1, n]"),
        ("fclt.reps", "replications", "500", "samples on each side of the KS test"),
        ("fclt.functional", "-", "endpoint", "endpoint | supabs"),
        ("fclt.grid", "points per axis", "17", "time grid for supabs"),
    ],
    "sheet": [
        ("sheet.d", "-", "2", "dimension of the sheet"),
        ("sheet.grid", "points per axis", "17", "uniform grid on [0, 1] including 0 and 1"),
        ("sheet.check_reps", "replications", "0", "if > 0, also run the covariance check"),
    ],
}


class StoreUnwritable(Exception):
    pass


@dataclass
class Outcome:
    payload: Dict[str, Any]
    header: List[str]
    rows: List[List[Any]]
    ok: bool = True


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def render_json(payload) -> str:
    return json.dumps(_plain(payload), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def render_table(header, rows) -> str:
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return f"{float(v):.6g}"
        return _cell(v)

    cells = [[str(h) for h in header]] + [[fmt(v) for v in r] for r in rows]
    widths = [max(len(row[c]) for row in cells) for c in range(len(header))]
    lines = ["  ".join(s.ljust(w) for s, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def persist(record: Dict[str, Any], store_path) -> int:
    """Append a run record as one JSON line; returns its id."""
    p = Path(store_path)
    if not p.parent.is_dir():
        raise StoreUnwritable(f"directory {p.parent} does not exist")
    last_id = 0
    needs_newline = False
    if p.exists():
        text = p.read_text(encoding="utf-8")
        needs_newline = bool(text) and not text.endswith("\n")
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                last_id = max(last_id, int(json.loads(line)["id"]))
            except (ValueError, KeyError, TypeError):
                log.warning("store %s: line %d is corrupted and was skipped", p, lineno)
    rec = dict(record)
    rec["id"] = last_id + 1
    try:
        with p.open("a", encoding="utf-8", newline="\n") as fh:
            if needs_newline:
                fh.write("\n")
            fh.write(json.dumps(_plain(rec), sort_keys=True, ensure_ascii=False) + "\n")
    except OSError as exc:
        raise StoreUnwritable(str(exc))
    return rec["id"]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _set(cfg: Dict, key: str, value) -> None:
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def _dimension(cfg) -> int:
    d = lookup(cfg, "field.dimension")
    if d is None:
        raise ConfigError("field.dimension", "required integer is missing")
    return get_int(cfg, "field.dimension", lo=1)


def cmd_check(cfg, seed) -> Outcome:
    f = field_from(cfg)
    if not isinstance(f, LinearFieldSpec):
        raise ConfigError("field.kind", "check needs a linear field")
    n_max = get_int(cfg, "check.n_max", 64, lo=4)
    h = cr.hannan_check(f)
    mw = cr.mw_check(f, n_max)
    rows = [["hannan", "-", e.partial_sum, e.tail_bound, e.verdict] for e in h.entries]
    rows += [["maxwell-woodroofe", lt.dirset_label(e.E), e.partial_sum, e.tail_bound, e.verdict] for e in mw.entries]
    ok = h.satisfied and mw.satisfied
    return Outcome({"hannan": h.to_json(), "mw": mw.to_json()}, ["criterion", "E", "partial_sum", "tail_bound", "verdict"], rows, ok)


def _load_system(cfg):
    path = lookup(cfg, "decompose.system")
    if path is None:
        return None, None
    if not isinstance(path, str):
        raise ConfigError("decompose.system", "expected a path")
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("decompose.system", f"file {path} not found")
    except json.JSONDecodeError as exc:
        raise ConfigError("decompose.system", f"invalid JSON: {exc}")
    try:
        sys_ = ex.load_system(doc)
    except KeyError as exc:
        raise ConfigError("decompose.system", f"missing key {exc.args[0]!r}")
    except (ex.ExactSysError, ValueError) as exc:
        raise ConfigError("decompose.system", str(exc))
    return sys_, doc


def cmd_decompose(cfg, seed) -> Outcome:
    system, doc = _load_system(cfg)
    if system is None:
        fld = field_from(cfg)
        if not isinstance(fld, LinearFieldSpec):
            raise ConfigError("field.kind", "decompose embeds linear fields only")
        radius = get_int(cfg, "decompose.radius", 1, lo=0)
        fld = LinearFieldSpec(fld.d, fld.coeffs, InnovationSpec("rademacher", fld.innovation.sd))
        try:
            system = exact_embed(fld, radius=radius)
        except (ex.TooLarge, ValueError) as exc:
            raise ConfigError("decompose.radius", str(exc))
        f = system.observable
    else:
        vals = lookup(cfg, "decompose.function", doc.get("function"))
        if vals is None:
            f = np.zeros(system.size)
            f[0] = 1.0
        else:
            if not isinstance(vals, list) or len(vals) != system.size:
                raise ConfigError("decompose.function", f"expected {system.size} values")
            f = np.asarray(vals, dtype=float)
    center = lookup(cfg, "decompose.center", True)
    if not isinstance(center, bool):
        raise ConfigError("decompose.center", "expected true or false")
    if center:
        f = f - system.mean(f)
    elif abs(system.mean(f)) > 1e-12:
        raise ConfigError("decompose.function", "function is not centered")
    payload: Dict[str, Any] = {"atoms": system.size, "d": system.d}
    if isinstance(system, ex.EmbeddedSystem):
        dec = ex.omc_decompose(system, f)
        ok = dec.solvable and dec.certified
    else:
        n_max = get_int(cfg, "decompose.n_max", 64, lo=1)
        rep = ex.verify_equivalence(system, f, n_max)
        dec = rep.decomposition
        payload["equivalence"] = rep.to_json()
        ok = dec.solvable and dec.certified and rep.agree
    payload["decomposition"] = dec.to_json()
    rows = []
    for J, cert in dec.certificates.items():
        rows.append([lt.dirset_label(J), system.norm(dec.parts[J]), cert.measurability,
                     max(cert.projections.values(), default=0.0), dec.residual])
    return Outcome(payload, ["J", "norm", "measurability", "projection", "residual"], rows, ok)


def cmd_approx(cfg, seed, reps_flag) -> Outcome:
    f = field_from(cfg)
    if not isinstance(f, LinearFieldSpec):
        raise ConfigError("field.kind", "approx needs a linear field")
    ks = get_int_list(cfg, "approx.k", [1, 2, 4, 8, 16])
    if not ks or ks != sorted(ks) or ks[0] < 1:
        raise ConfigError("approx.k", "expected an ascending list of positive integers")
    n = get_index(cfg, "approx.n", f.d, 64)
    reps = reps_flag if reps_flag is not None else get_int(cfg, "approx.reps", 1000, lo=2)
    rows, errs = [], []
    for k in ks:
        blk = ap.blocking(f, k)
        ap.martingale_part(blk)
        est = mc.approx_error(f, k, n, reps, seed)
        errs.append(est)
        rows.append([k, blk.mk_coefficient, est.mean, est.std_error])
    cauchy = ap.cauchy_diagnostics(f, ks)
    ok = all(b.mean - a.mean <= 2 * max(a.std_error, b.std_error) for a, b in zip(errs, errs[1:]))
    payload = {
        "n": list(n),
        "reps": reps,
        "rows": [{"k": r[0], "mk_coefficient": r[1], "error": r[2], "std_error": r[3]} for r in rows],
        "cauchy": cauchy.to_json(),
        "non_increasing": ok,
    }
    return Outcome(payload, ["k", "mk_coefficient", "error", "std_error"], rows, ok)


def cmd_inequality(cfg, seed, kind, reps_flag) -> Outcome:
    if kind == "doob":
        f = field_from(cfg, default_kind="orthomd")
        if not isinstance(f, OrthoMDSpec):
            raise ConfigError("field.kind", "doob needs an orthomd field")
        n = get_index(cfg, "inequality.n", f.d, 32)
        reps = reps_flag if reps_flag is not None else get_int(cfg, "inequality.reps", 2000, lo=2)
        rep = mc.verify_doob(f, n, reps, seed)
        row = [f.d, ",".join(map(str, n)), rep.estimate.mean, rep.estimate.std_error, rep.bound, rep.tolerance_bound, rep.passed]
        return Outcome(rep.to_json(), ["d", "n", "estimate", "std_error", "bound", "tolerance_bound", "passed"], [row], rep.passed)
    f = field_from(cfg)
    if not isinstance(f, LinearFieldSpec):
        raise ConfigError("field.kind", "dyadic needs a linear field")
    raw_E = lookup(cfg, "inequality.E", [])
    if not isinstance(raw_E, list):
        raise ConfigError("inequality.E", "expected a list of 1-based axes")
    try:
        E = lt.dirset_from_json(raw_E, f.d)
    except (ValueError, TypeError) as exc:
        raise ConfigError("inequality.E", str(exc))
    nd = get_index(cfg, "inequality.n_dyadic", f.d, 6)
    reps = reps_flag if reps_flag is not None else get_int(cfg, "inequality.reps", 500, lo=2)
    K1 = get_float(cfg, "inequality.K1", 6.0, positive=True)
    C1 = get_float(cfg, "inequality.C1", 6.0, positive=True)
    try:
        rep = mc.verify_dyadic_maximal(f, E, nd, reps, seed, K1, C1)
    except mc.MembershipFailed as exc:
        raise ConfigError("inequality.E", str(exc))
    rows = [[",".join(map(str, r.m)), r.lhs.mean, r.lhs.std_error, r.middle, r.ratio, r.proof_ratio, r.mw_form] for r in rep.rows]
    return Outcome(rep.to_json(), ["m", "lhs", "lhs_se", "middle", "ratio", "proof_ratio", "mw_form"], rows, rep.passed)


def cmd_fclt(cfg, seed, reps_flag) -> Outcome:
    f = field_from(cfg)
    n = get_index(cfg, "fclt.n", f.d, 64)
    reps = reps_flag if reps_flag is not None else get_int(cfg, "fclt.reps", 500, lo=2)
    functional = get_str(cfg, "fclt.functional", "endpoint", mc.FUNCTIONALS)
    grid = get_int(cfg, "fclt.grid", 17, lo=2)
    try:
        rep = mc.fclt_ks(f, n, reps, functional, seed, grid)
    except mc.DegenerateScale as exc:
        payload = {"degenerate": True, "note": str(exc), "n": list(n)}
        return Outcome(payload, ["degenerate", "note"], [[True, str(exc)]], False)
    except TypeError as exc:
        raise ConfigError("field.kind", str(exc))
    row = [functional, ",".join(map(str, n)), reps, rep.sigma, rep.statistic, rep.pvalue, rep.passed]
    return Outcome(rep.to_json(), ["functional", "n", "reps", "sigma", "statistic", "pvalue", "passed"], [row], rep.passed)


def cmd_sheet(cfg, seed, reps_flag) -> Outcome:
    d = get_int(cfg, "sheet.d", 2, lo=1)
    if d > lt.MAX_DIM:
        raise ConfigError("sheet.d", f"must be ≤ {lt.MAX_DIM}")
    grid = get_int(cfg, "sheet.grid", 17, lo=2)
    path = mc.simulate_sheet(grid, seed, d)
    header = [f"t{q + 1}" for q in range(d)] + ["value"]
    rows = []
    for idx in np.ndindex(*path.values.shape):
        rows.append([float(path.grid[q][c]) for q, c in enumerate(idx)] + [float(path.values[idx])])
    payload: Dict[str, Any] = {"d": d, "grid": [list(map(float, g)) for g in path.grid], "values": path.values.tolist()}
    ok = True
    check_reps = reps_flag if reps_flag is not None else get_int(cfg, "sheet.check_reps", 0, lo=0)
    if check_reps:
        chk = mc.sheet_covariance_check(check_reps, seed, d)
        payload["covariance_check"] = chk.to_json()
        ok = chk.passed
    return Outcome(payload, header, rows, ok)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _epilog(cmd: str) -> str:
    lines = ["config keys (TOML):"]
    for key, unit, default, desc in COMMAND_KEYS[cmd]:
        lines.append(f"  {key:<24} [{unit}] default: {default}")
        lines.append(f"      {desc}")
    lines.append(f"seed: --seed, else ${SEED_ENV}, else config 'seed', else 0")
    return "\n".join(lines)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML configuration file")
    common.add_argument("--seed", type=_u64, metavar="U64", help="master seed")
    common.add_argument("--reps", type=int, metavar="N", help="override the replication count")
    common.add_argument("--out", metavar="PATH", help="write output here instead of stdout")
    common.add_argument("--store", metavar="PATH", help="append a run record to this JSON-lines file")
    common.add_argument("--format", choices=("json", "csv", "table"), default="json")

    parser = argparse.ArgumentParser(prog="orthofield", description="Orthomartingale approximation toolkit for stationary random fields.")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("check", parents=[common], help="Hannan and Maxwell–Woodroofe criteria", epilog=_epilog("check"), formatter_class=fmt)
    p.add_argument("--n-max", type=int, help="override check.n_max")

    p = sub.add_parser("decompose", parents=[common], help="exact orthomartingale-coboundary decomposition", epilog=_epilog("decompose"), formatter_class=fmt)
    p.add_argument("--system", metavar="PATH", help="override decompose.system")
    p.add_argument("--n-max", type=int, help="override decompose.n_max")

    p = sub.add_parser("approx", parents=[common], help="blocking, m_k and approximation error", epilog=_epilog("approx"), formatter_class=fmt)
    p.add_argument("--k", help="comma-separated block sizes")
    p.add_argument("--n", help="window size, comma-separated or one value")

    p = sub.add_parser("inequality", parents=[common], help="Doob or dyadic maximal inequality", epilog=_epilog("inequality"), formatter_class=fmt)
    p.add_argument("kind", choices=("doob", "dyadic"))
    p.add_argument("--d", type=int, help="override field.dimension")
    p.add_argument("--n", help="doob window size")
    p.add_argument("--E", help="dyadic direction set, comma-separated 1-based axes")

    p = sub.add_parser("fclt", parents=[common], help="KS test against the Brownian sheet", epilog=_epilog("fclt"), formatter_class=fmt)
    p.add_argument("--n", help="window size")
    p.add_argument("--functional", choices=mc.FUNCTIONALS)

    p = sub.add_parser("sheet", parents=[common], help="Brownian sheet sample export", epilog=_epilog("sheet"), formatter_class=fmt)
    p.add_argument("--d", type=int, help="override sheet.d")
    p.add_argument("--grid", type=int, help="override sheet.grid")
    return parser


def _resolve(args, cfg: Dict) -> Dict:
    cfg = copy.deepcopy(cfg)
    cmd = args.command
    if getattr(args, "n_max", None) is not None:
        _set(cfg, f"{cmd}.n_max", args.n_max)
    if getattr(args, "system", None) is not None:
        _set(cfg, "decompose.system", args.system)
    if getattr(args, "k", None) is not None:
        _set(cfg, "approx.k", list(as_index(args.k, "--k")))
    if getattr(args, "n", None) is not None:
        n = list(as_index(args.n, "--n"))
        _set(cfg, f"{cmd}.n", n[0] if len(n) == 1 else n)
    if cmd == "inequality":
        if args.d is not None:
            _set(cfg, "field.dimension", args.d)
        if args.E is not None:
            _set(cfg, "inequality.E", list(as_index(args.E, "--E")) if args.E.strip() else [])
    if cmd == "fclt" and args.functional is not None:
        _set(cfg, "fclt.functional", args.functional)
    if cmd == "sheet":
        if args.d is not None:
            _set(cfg, "sheet.d", args.d)
        if args.grid is not None:
            _set(cfg, "sheet.grid", args.grid)
    return cfg


def _seed(args, cfg) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return _u64(env.strip())
        except (ValueError, argparse.ArgumentTypeError):
            raise ConfigError(SEED_ENV, f"expected an unsigned 64-bit integer, got {env!r}")
    v = lookup(cfg, "seed", 0)
    if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v < 2 ** 64:
        raise ConfigError("seed", f"expected an unsigned 64-bit integer, got {v!r}")
    return v


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        cfg = _resolve(args, load_config(args.config))
        seed = _seed(args, cfg)
        if args.reps is not None and args.reps < 2:
            raise ConfigError("--reps", "must be at least 2")
        cmd = args.command
        if cmd == "check":
            out = cmd_check(cfg, seed)
        elif cmd == "decompose":
            out = cmd_decompose(cfg, seed)
        elif cmd == "approx":
            out = cmd_approx(cfg, seed, args.reps)
        elif cmd == "inequality":
            out = cmd_inequality(cfg, seed, args.kind, args.reps)
        elif cmd == "fclt":
            out = cmd_fclt(cfg, seed, args.reps)
        else:
            out = cmd_sheet(cfg, seed, args.reps)
    except ConfigError as exc:
        print(f"orthofield: input error in '{exc.key}': {exc}", file=sys.stderr)
        return 2
    if args.format == "json":
        text = render_json(out.payload)
    elif args.format == "csv":
        text = render_csv(out.header, out.rows)
    else:
        text = render_table(out.header, out.rows)
    artifacts = []
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        except OSError as exc:
            print(f"orthofield: input error in '--out': {exc}", file=sys.stderr)
            return 2
        artifacts.append(args.out)
    else:
        sys.stdout.write(text)
    if args.store:
        record = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "subcommand": cmd if cmd != "inequality" else f"inequality {args.kind}",
            "config": cfg,
            "seed": seed,
            "outputs": out.payload,
            "artifacts": artifacts,
        }
        try:
            persist(record, args.store)
        except StoreUnwritable as exc:
            print(f"orthofield: input error in '--store': {exc}", file=sys.stderr)
            return 2
    return 0 if out.ok else 1


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(levelname)s: %(message)s")
    sys.exit(run())
