"""Command line entry point: audits, experiment runs and parameter sweeps driven by TOML manifests.

    roughpde audit chen|adjoint|bracket|rho [options]
    roughpde run KIND [options]
    roughpde sweep --manifest FILE --axis KEY --values V1,V2,...

Exit status: 0 pass, 2 experiment failure, 1 configuration error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:          # python < 3.11
    import tomli as tomllib
import tomli_w

from . import experiments as ex
from .errors import (CoercivityError, ConfigurationError, DivergenceError, ExperimentFailure, ParameterError,
                     PreconditionError, StabilityError, UnsupportedError)
from .grid_ops import write_pgm

log = logging.getLogger("roughpde")

EXIT_PASS, EXIT_CONFIG, EXIT_FAIL = 0, 1, 2


class ManifestError(ConfigurationError):
    """Schema violation; the message names the offending key path."""


# -- manifest -------------------------------------------------------------------

SHEET_KEYS = {"kind": str, "H": float, "level": int, "seed": int, "base": int, "sample_level": int,
              "profile": (list, dict), "freq": list, "phase": list, "alpha": float}
TABLES = {
    "grid": {"d": int, "n": int},
    "partition": {"T": float, "steps": int, "level": int},
    "sheet": SHEET_KEYS,
    "output": {"root": str, "name": str},
    "sweep": {"axis": str, "values": list, "workers": int},
}
SUBCOMMANDS = ("run", "audit")


@dataclass
class KindSpec:
    runner: object
    problem: tuple = ()
    tolerances: tuple = ()
    n: int = 64
    T: float = 0.25
    steps: int | None = 64
    sheet: dict | None = None


def _setup(r) -> ex.Setup:
    pr = r.problem
    return ex.Setup(n=r.n, T=r.T, steps=r.steps, sheet=r.sheet,
                    diffusion=pr.get("diffusion", {"kind": "quasilinear"}),
                    u0=pr.get("u0", {"shape": "sin"}), source=pr.get("source"))


def _pick(r, names):
    out = {k: r.problem[k] for k in names if k in r.problem}
    out.update({k: r.tolerances[k] for k in r.tolerances})
    return out


def _tuple(v):
    return tuple(v) if isinstance(v, list) else v


def _run_heat(r):
    kw = _pick(r, ("k",))
    for key in ("time_levels", "space_levels"):
        if key in r.problem:
            kw[key] = tuple(r.problem[key])
    return ex.heat_experiment(n=r.n, T=r.T, steps=r.steps, **kw)


def _run_transport(r):
    kw = _pick(r, ("c",))
    if "levels" in r.problem:
        kw["levels"] = tuple(r.problem["levels"])
    return ex.transport_experiment(n=r.n, T=r.T, **kw)


def _run_remainder(r):
    return ex.remainder_experiment(n=r.n, T=r.T, steps=r.steps, sheet=r.sheet, **r.tolerances)


def _run_quasilinear(r):
    return ex.quasilinear_experiment(_setup(r), **r.tolerances)


def _run_renorm(r):
    b = dict(r.problem.get("beta", {"kind": "square"}))
    beta = ex.BetaFamily(b.pop("kind"), **b)
    kw = dict(r.tolerances)
    if "levels" in r.problem:
        kw["levels"] = tuple(r.problem["levels"])
    return ex.renorm_experiment(_setup(r), beta, **kw)


def _run_product(r):
    pr = r.problem
    su = _setup(r)
    sv = ex.Setup(n=r.n, T=r.T, steps=r.steps, sheet=r.sheet,
                  diffusion=pr.get("v_diffusion", pr.get("diffusion", {"kind": "quasilinear"})),
                  u0=pr.get("v_u0", pr.get("u0", {"shape": "sin"})), source=pr.get("v_source"))
    return ex.product_experiment(su, sv, y_extra=(pr.get("y0"), pr.get("ym1")), z_extra=(pr.get("z0"), pr.get("zm1")),
                                 same=bool(pr.get("same", False)), renorm_compare=bool(pr.get("renorm_compare", False)),
                                 **r.tolerances)


def _run_duality(r):
    kw = _pick(r, ("diffusion", "u0", "mT", "F", "G", "halving"))
    return ex.duality_experiment(n=r.n, steps=r.steps, T=r.T, sheet=r.sheet, **kw)


def _run_divfree(r):
    kw = _pick(r, ("ref_level", "identical"))
    for key in ("levels", "ladder"):
        if key in r.problem:
            kw[key] = tuple(r.problem[key])
    return ex.divfree_uniqueness(_setup(r), **kw)


def _run_moments(r):
    kw = dict(r.tolerances)
    for key in ("orders", "levels"):
        if key in r.problem:
            kw[key] = tuple(r.problem[key])
    return ex.transport_moments(r.sheet, n=r.n, steps=r.steps, T=r.T, **kw)


def _run_dual_weight(r):
    kw = _pick(r, ("a", "b", "r", "q", "moser"))
    if "levels" in r.problem:
        kw["levels"] = tuple(r.problem["levels"])
    return ex.dual_weight_pipeline(n=r.n, steps=r.steps, T=r.T, sheet=r.sheet, **kw)


def _run_gradient(r):
    return ex.gradient_experiment(_setup(r), **_pick(r, ("datum_norm", "safety")))


def _run_wong_zakai(r):
    kw = _pick(r, ("ref_level", "identical"))
    if "levels" in r.problem:
        kw["levels"] = tuple(r.problem["levels"])
    return ex.wong_zakai(_setup(r), **kw)


def _run_moser(r):
    return ex.moser_experiment(n=r.n, steps=r.steps, T=r.T, sheet=r.sheet, **_pick(r, ("r", "q", "eps")))


def _audit(fn):
    def run(r):
        return fn(r.sheet, n=r.n, steps=r.steps, T=r.T, **r.tolerances)
    return run


_SETUP_KEYS = ("diffusion", "u0", "source")
_FBM6 = {"kind": "fbm", "H": 0.45, "level": 6, "seed": 1, "profile": [{"shape": "sin", "amp": 0.3}]}

RUN_KINDS = {
    "heat": KindSpec(_run_heat, ("k", "time_levels", "space_levels"), ("step_tol", "order_band"), 64, 1.0, 64),
    "transport": KindSpec(_run_transport, ("c", "levels"), ("order_threshold",), 512, 1.0, None),
    "remainder": KindSpec(_run_remainder, (), ("natural_threshold", "ru_threshold"), 128, 0.5, 256),
    "quasilinear": KindSpec(_run_quasilinear, _SETUP_KEYS, ("residual_tol",), 64, 0.25, 64, _FBM6),
    "renorm": KindSpec(_run_renorm, _SETUP_KEYS + ("beta", "levels"), ("order_threshold", "exact_tol"),
                       32, 0.25, 32, {"kind": "fbm", "H": 0.45, "level": 5, "seed": 1,
                                      "profile": [{"shape": "sin", "amp": 0.2}]}),
    "product": KindSpec(_run_product, _SETUP_KEYS + ("v_u0", "v_diffusion", "v_source", "y0", "ym1", "z0", "zm1",
                                                     "same", "renorm_compare"), ("tol",), 32, 0.25, 32,
                        {"kind": "smooth", "profile": [{"shape": "sin", "amp": 0.2}], "freq": [3.0]}),
    "duality": KindSpec(_run_duality, ("diffusion", "u0", "mT", "F", "G", "halving"),
                        ("rel_tol", "abs_tol", "ratio_threshold"), 256, 1.0, 4096),
    "divfree": KindSpec(_run_divfree, _SETUP_KEYS + ("levels", "ref_level", "ladder", "identical"),
                        ("ratio_threshold",), 64, 0.25, 512,
                        {"kind": "fbm", "H": 0.45, "seed": 1, "profile": [{"shape": "one", "amp": 0.5}]}),
    "transport-moments": KindSpec(_run_moments, ("orders", "levels"), ("order_threshold",), 64, 0.25, 64),
    "dual-weight": KindSpec(_run_dual_weight, ("a", "b", "r", "q", "levels", "moser"), ("ratio_threshold",),
                            64, 0.5, 128),
    "gradient": KindSpec(_run_gradient, _SETUP_KEYS + ("datum_norm", "safety"), ("ratio_tol",), 64, 0.25, 128,
                         _FBM6),
    "wong-zakai": KindSpec(_run_wong_zakai, _SETUP_KEYS + ("levels", "ref_level", "identical"),
                           ("ratio_threshold", "energy_tol"), 64, 0.25, 1024,
                           {"kind": "fbm", "H": 0.45, "seed": 1, "profile": [{"shape": "sin", "amp": 0.5}]}),
    "moser": KindSpec(_run_moser, ("r", "q", "eps"), (), 128, 0.5, 256),
}
_AUDIT_SHEET = {"kind": "fbm", "H": 0.45, "level": 6, "seed": 7}
AUDIT_KINDS = {
    "chen": KindSpec(_audit(ex.chen_audit), (), ("tol",), 128, 1.0, None, _AUDIT_SHEET),
    "adjoint": KindSpec(_audit(ex.adjoint_audit), (), ("tol",), 128, 1.0, None, _AUDIT_SHEET),
    "bracket": KindSpec(_audit(ex.bracket_audit), (), ("tol", "commuting_tol"), 128, 1.0, 64, {"kind": "sigma_rp"}),
    "rho": KindSpec(_audit(ex.rho_audit), (), ("tol",), 128, 1.0, None, _AUDIT_SHEET),
}


def _kinds(sub):
    return RUN_KINDS if sub == "run" else AUDIT_KINDS


def _check_type(path, value, typ):
    if typ is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif typ is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, typ)
    if not ok:
        raise ManifestError(f"{path}: expected {getattr(typ, '__name__', typ)}, got {type(value).__name__}")


@dataclass
class RunManifest:
    subcommand: str
    kind: str
    grid: dict = field(default_factory=dict)
    partition: dict = field(default_factory=dict)
    sheet: dict | None = None
    problem: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunManifest":
        raw = copy.deepcopy(raw)
        for key in ("subcommand", "kind"):
            if key not in raw:
                raise ManifestError(f"missing required key: {key}")
        allowed = {"subcommand", "kind", "problem", "tolerances"} | set(TABLES)
        for key in raw:
            if key not in allowed:
                raise ManifestError(f"unknown key: {key}")
        sub, kind = raw["subcommand"], raw["kind"]
        _check_type("subcommand", sub, str)
        _check_type("kind", kind, str)
        if sub not in SUBCOMMANDS:
            raise ManifestError(f"subcommand: expected one of {', '.join(SUBCOMMANDS)}, got {sub!r}")
        kinds = _kinds(sub)
        if kind not in kinds:
            raise ManifestError(f"kind: unknown {sub} kind {kind!r} (choose from {', '.join(kinds)})")
        spec = kinds[kind]
        for table, schema in TABLES.items():
            val = raw.get(table)
            if val is None:
                continue
            _check_type(table, val, dict)
            for k, v in val.items():
                if k not in schema:
                    raise ManifestError(f"unknown key: {table}.{k}")
                _check_type(f"{table}.{k}", v, schema[k])
        for table, names in (("problem", spec.problem), ("tolerances", spec.tolerances)):
            val = raw.get(table, {})
            _check_type(table, val, dict)
            for k in val:
                if k not in names:
                    raise ManifestError(f"unknown key: {table}.{k} (kind {kind!r} accepts: {', '.join(names) or 'none'})")
        if raw.get("grid", {}).get("d", 1) != 1:
            raise ManifestError("grid.d: only d = 1 is implemented")
        if "sheet" in raw and "kind" not in raw["sheet"] and spec.sheet is None:
            # a bare sheet table only makes sense on top of a default sheet
            raise ManifestError("missing required key: sheet.kind")
        if "sweep" in raw:
            for key in ("axis", "values"):
                if key not in raw["sweep"]:
                    raise ManifestError(f"missing required key: sweep.{key}")
        return cls(subcommand=sub, kind=kind, grid=raw.get("grid", {}), partition=raw.get("partition", {}),
                   sheet=raw.get("sheet"), problem=raw.get("problem", {}), tolerances=raw.get("tolerances", {}),
                   output=raw.get("output", {}), sweep=raw.get("sweep", {}))

    def to_dict(self) -> dict:
        out = {"subcommand": self.subcommand, "kind": self.kind}
        for name in ("grid", "partition", "sheet", "problem", "tolerances", "output", "sweep"):
            val = getattr(self, name)
            if val:
                out[name] = copy.deepcopy(val)
        return out

    @classmethod
    def loads(cls, text: str) -> "RunManifest":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ManifestError(f"manifest is not valid TOML: {exc}") from exc
        return cls.from_dict(raw)

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @property
    def digest(self) -> str:
        body = self.to_dict()
        body.pop("output", None)          # where results go does not change them
        return ex.digest(body)


@dataclass
class Resolved:
    n: int
    T: float
    steps: int | None
    sheet: dict | None
    problem: dict
    tolerances: dict


def resolve(m: RunManifest) -> Resolved:
    spec = _kinds(m.subcommand)[m.kind]
    steps = m.partition.get("steps", spec.steps)
    if steps is not None:
        steps = int(steps) * 2 ** int(m.partition.get("level", 0))
    elif "level" in m.partition:
        raise ManifestError("partition.level needs partition.steps")
    sheet = m.sheet if m.sheet is not None else spec.sheet
    if m.sheet is not None and "kind" not in m.sheet:
        sheet = {**spec.sheet, **m.sheet}
    if sheet is not None and sheet.get("kind") == "none":
        sheet = None
    return Resolved(int(m.grid.get("n", spec.n)), float(m.partition.get("T", spec.T)), steps,
                    copy.deepcopy(sheet), copy.deepcopy(m.problem), copy.deepcopy(m.tolerances))


# -- artifacts ------------------------------------------------------------------

UNITS = {"t": "time", "s": "time", "dt": "time", "T_plus": "time", "h": "length", "level": "count",
         "level_a": "count", "level_b": "count", "ref_level": "count", "steps": "count", "n": "count",
         "rung": "count", "kind": "label", "check": "label", "space": "label", "worst_s": "node",
         "worst_theta": "node", "worst_t": "node", "value": "mixed"}


def _unit(col: str) -> str:
    return UNITS.get(col, "1")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def write_csv(path: Path, columns, rows, digest: str, units=None):
    units = units or [_unit(c) for c in columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"# manifest_digest={digest}"] + [f"{c} [{u}]" for c, u in zip(columns, units)])
        w.writerow(list(columns))
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_artifacts(rep: ex.ExperimentReport, m: RunManifest, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    d = m.digest
    cols = rep.columns or tuple(f"c{i}" for i in range(len(rep.table[0]) if rep.table else 0))
    write_csv(out / "report.csv", cols, rep.table, d)
    write_csv(out / "checks.csv", ("check", "value", "relation", "threshold", "status"),
              [(c.name, c.value, c.relation, c.threshold, "pass" if c.ok else "fail") for c in rep.checks], d)
    for name, arr in sorted(rep.series.items()):
        a = np.asarray(arr)
        if a.dtype.kind not in "fiu":
            continue
        if a.ndim == 1:
            write_csv(out / f"series_{name}.csv", ("index", name), enumerate(a.tolist()), d, ["count", "1"])
        elif a.ndim == 2:
            write_csv(out / f"field_{name}.csv", ("row",) + tuple(f"x{j}" for j in range(a.shape[1])),
                      ((k, *a[k].tolist()) for k in range(a.shape[0])), d,
                      ["time index"] + ["1"] * a.shape[1])
            write_pgm(out / f"field_{name}.pgm", a, [f"# manifest_digest={d},min [1],max [1]", "# rows = time nodes, columns = x"])
    lines = [rep.summary()] + [c.line() for c in rep.checks]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    (out / "manifest.toml").write_text(m.dumps())


def output_dir(m: RunManifest) -> Path:
    root = os.environ.get("ROUGHPDE_OUT") or m.output.get("root") or "roughpde_out"
    name = m.output.get("name") or f"{m.subcommand}-{m.kind}-{m.digest[:8]}"
    return Path(root) / name


# -- execution ------------------------------------------------------------------

NUMERICAL_FAILURES = (StabilityError, DivergenceError, CoercivityError, ExperimentFailure)
CONFIG_FAILURES = (ConfigurationError, PreconditionError, ParameterError, UnsupportedError)


def execute(m: RunManifest, out: Path | None = None):
    """Run one manifest; returns (exit code, report or None, message)."""
    out = output_dir(m) if out is None else out
    try:
        r = resolve(m)
        rep = _kinds(m.subcommand)[m.kind].runner(r)
    except CONFIG_FAILURES as exc:
        return EXIT_CONFIG, None, f"configuration error: {exc}"
    except NUMERICAL_FAILURES as exc:
        out.mkdir(parents=True, exist_ok=True)
        msg = f"{m.kind} fail {type(exc).__name__}: {exc}"
        (out / "summary.txt").write_text(msg + "\n")
        return EXIT_FAIL, None, msg
    write_artifacts(rep, m, out)
    if rep.passed:
        return EXIT_PASS, rep, rep.summary()
    return EXIT_FAIL, rep, rep.summary() + " | failing: " + "; ".join(c.line() for c in rep.failures)


def _parse_value(text: str):
    """TOML literal if it parses, else a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def set_path(raw: dict, dotted: str, value):
    keys = dotted.split(".")
    cur = raw
    for k in keys[:-1]:
        nxt = cur.setdefault(k, {})
        if not isinstance(nxt, dict):
            raise ManifestError(f"{dotted}: {k} is not a table")
        cur = nxt
    cur[keys[-1]] = value


def get_path(raw: dict, dotted: str):
    cur = raw
    for k in dotted.split("."):
        if not isinstance(cur, dict) or k not in cur:
            return None
        cur = cur[k]
    return cur


def _child(raw: dict, out: str):
    m = RunManifest.from_dict(raw)
    code, rep, msg = execute(m, Path(out))
    head = {} if rep is None else {k: v for k, v in rep.headline.items()}
    return code, head, msg


def sweep(m: RunManifest, axis: str, values, workers: int = 2, out: Path | None = None) -> int:
    base = m.to_dict()
    base.pop("sweep", None)
    if axis.split(".")[0] not in ({"problem", "tolerances"} | set(TABLES) - {"sweep", "output"}):
        raise ManifestError(f"sweep.axis: {axis!r} does not name a manifest key")
    children = []
    for v in values:
        raw = copy.deepcopy(base)
        set_path(raw, axis, v)
        RunManifest.from_dict(raw)            # validate before launching anything
        children.append((v, raw))
    out = output_dir(m) if out is None else out
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    aborted = None
    with ProcessPoolExecutor(max_workers=max(1, int(workers))) as pool:
        futs = [(v, pool.submit(_child, raw, str(out / f"{axis}={_fmt(v)}"))) for v, raw in children]
        for v, fut in futs:
            code, head, msg = fut.result()
            results[_fmt(v)] = (v, code, head, msg)
            log.info("%s=%s: %s", axis, _fmt(v), msg)
            if code == EXIT_CONFIG:
                aborted = msg
                for _, f in futs:
                    f.cancel()
                break
    if aborted:
        print(f"sweep aborted: {aborted}", file=sys.stderr)
        return EXIT_CONFIG
    keys = sorted({k for _, _, head, _ in results.values() for k in head})
    rows = [(_fmt(v), code, "pass" if code == EXIT_PASS else "fail", *[head.get(k, "") for k in keys])
            for v, code, head, _ in (results[_fmt(v)] for v, _ in children)]
    write_csv(out / "sweep.csv", (axis, "exit", "status", *keys), rows, m.digest,
              ["axis", "code", "label"] + ["1"] * len(keys))
    failed = [r for r in rows if r[1] != EXIT_PASS]
    (out / "summary.txt").write_text(f"sweep {axis} over {len(rows)} values: {len(rows) - len(failed)} pass, "
                                     f"{len(failed)} fail\n")
    return EXIT_FAIL if failed else EXIT_PASS


# -- argument parsing -----------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--manifest", type=Path, help="TOML manifest; flags below override it")
    p.add_argument("--n", type=int, help="grid points (grid.n)")
    p.add_argument("--steps", type=int, help="time steps (partition.steps)")
    p.add_argument("--T", type=float, help="horizon (partition.T)")
    p.add_argument("--sheet", help="sheet kind (sheet.kind): none | linear | smooth | sigma_rp | fbm")
    p.add_argument("--H", type=float, help="Hurst index (sheet.H)")
    p.add_argument("--level", type=int, help="dyadic input level (sheet.level)")
    p.add_argument("--seed", type=int, help="random seed (sheet.seed)")
    p.add_argument("--out", help="output directory name under the output root (output.name)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="set a dotted manifest key to a TOML literal")


FLAG_KEYS = {"n": "grid.n", "steps": "partition.steps", "T": "partition.T", "sheet": "sheet.kind",
             "H": "sheet.H", "level": "sheet.level", "seed": "sheet.seed", "out": "output.name"}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="roughpde", description="Rough parabolic PDE experiments and audits.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    pa = sub.add_parser("audit", help="driver and sheet audits")
    pa.add_argument("kind", nargs="?", choices=sorted(AUDIT_KINDS))
    _common(pa)
    pr = sub.add_parser("run", help="run an experiment")
    pr.add_argument("kind", nargs="?", choices=sorted(RUN_KINDS))
    _common(pr)
    ps = sub.add_parser("sweep", help="sweep one manifest key")
    ps.add_argument("target", nargs="?", choices=SUBCOMMANDS, help="audit or run (subcommand)")
    ps.add_argument("kind", nargs="?", help="audit or run kind")
    ps.add_argument("--axis", help="dotted manifest key (sweep.axis)")
    ps.add_argument("--values", help="comma separated TOML literals (sweep.values)")
    ps.add_argument("--workers", type=int, help="worker processes (sweep.workers)")
    _common(ps)
    return ap


def _load_raw(args) -> dict:
    raw = {}
    if args.manifest is not None:
        try:
            text = args.manifest.read_text()
        except OSError as exc:
            raise ManifestError(f"cannot read manifest {args.manifest}: {exc}") from exc
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ManifestError(f"manifest is not valid TOML: {exc}") from exc
    if args.command in SUBCOMMANDS:
        if args.manifest is None or "subcommand" not in raw:
            raw["subcommand"] = args.command
        elif raw["subcommand"] != args.command:
            raise ManifestError(f"subcommand: manifest says {raw['subcommand']!r}, command line says {args.command!r}")
        if args.kind is not None:
            raw["kind"] = args.kind
    elif getattr(args, "target", None) is not None:
        raw["subcommand"] = args.target
        if args.kind is not None:
            raw["kind"] = args.kind
    for flag, key in FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is not None:
            set_path(raw, key, val)
    for item in args.set:
        if "=" not in item:
            raise ManifestError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        set_path(raw, k.strip(), _parse_value(v.strip()))
    if args.command == "sweep":
        if args.axis is not None:
            set_path(raw, "sweep.axis", args.axis)
        if args.values is not None:
            set_path(raw, "sweep.values", [_parse_value(v.strip()) for v in args.values.split(",")])
        if args.workers is not None:
            set_path(raw, "sweep.workers", args.workers)
    return raw


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        raw = _load_raw(args)
        if args.command == "sweep":
            sw = raw.get("sweep")
            if not sw:
                raise ManifestError("missing required key: sweep.axis")
            m = RunManifest.from_dict(raw)
            code = sweep(m, m.sweep["axis"], m.sweep["values"], int(m.sweep.get("workers", 2)))
            print(f"sweep exit {code}")
            return code
        m = RunManifest.from_dict(raw)
    except ManifestError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code, rep, msg = execute(m)
    print(msg, file=sys.stderr if code == EXIT_CONFIG else sys.stdout)
    return code


if __name__ == "__main__":
    sys.exit(main())
