"""Command-line entry point: ``boundsem <subcommand> ...``.

Exit status: 0 on success or a true verdict, 1 on a false verdict, 2 on error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional

from . import bounds as B
from .bounded import DecisivePair, compile_fo, eval_bounded, fo_decisive_pair
from .fragments import FragmentError, decode, encode, kind_of
from .logic import DEFAULT_SIGNATURE, FormulaError, Signature, classify, formula_size, parse_formula, to_text
from .structures import FamilySpec, StructureError, coloring_cells, gen_cycle, load_family, sequence_family


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    demo: Optional[str] = None
    formula: Optional[str] = None
    sig: Optional[str] = None
    family: Optional[str] = None
    index: int = 0
    A: Optional[str] = None
    E: Optional[str] = None
    a_frag: Optional[str] = None
    e_frag: Optional[str] = None
    E_cap: int = 20
    tail_start: Optional[int] = None
    fmt: str = "table"
    normalize_A: bool = False
    env: tuple = ()
    size_cap: Optional[int] = None
    kind: str = "alternating"
    eps: str = "1/2"
    F: str = "mono:0->1"
    count: int = 40
    n_range: str = "3..12"
    colors: int = 2

    def __post_init__(self):
        if self.subcommand not in ("parse", "eval", "compile", "check", "demo"):
            raise ValueError(f"unknown subcommand {self.subcommand!r}")
        if self.E_cap < 0 or self.count < 1:
            raise ValueError("caps must be positive")
        if self.fmt not in ("table", "machine"):
            raise ValueError("format is 'table' or 'machine'")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers


def _formula(cfg: RunConfig):
    if not cfg.formula:
        raise UsageError("a formula is required (text, or @path)")
    text = Path(cfg.formula[1:]).read_text(encoding="utf-8") if cfg.formula.startswith("@") else cfg.formula
    sig = DEFAULT_SIGNATURE if cfg.sig is None else DEFAULT_SIGNATURE.merge(Signature.parse(cfg.sig))
    return parse_formula(text, sig)


def _bound(text: Optional[str], normalize: bool = False):
    if text is None:
        return None
    b = B.parse_bound(text)
    if normalize and isinstance(b, B.BPair):
        b = b.normalized()
    return b


def _pair(cfg: RunConfig, f) -> DecisivePair:
    if cfg.a_frag or cfg.e_frag:
        if not (cfg.a_frag and cfg.e_frag):
            raise UsageError("give both --a-frag and --e-frag")
        a = decode(cfg.a_frag, kind_of("A", f))
        e = decode(cfg.e_frag, kind_of("E", f))
        return DecisivePair(a, e, f)
    cls = classify(f)
    if cls == B.FO and cfg.A is None and cfg.E is None:
        return fo_decisive_pair(f)
    A = _bound(cfg.A or "star", cfg.normalize_A)
    E = _bound(cfg.E or "star")
    return B.fragment_of(A, E, f)


def _family(cfg: RunConfig) -> FamilySpec:
    if not cfg.family:
        raise UsageError("--family is required")
    fam = load_family(cfg.family)
    if cfg.tail_start is not None:
        fam = FamilySpec(fam.structures, cfg.tail_start)
    return fam


def _env(cfg: RunConfig) -> dict:
    out = {}
    for item in cfg.env:
        name, _, val = item.partition("=")
        if not val:
            raise UsageError(f"bad assignment {item!r}; use x=3")
        out[name.strip()] = int(val)
    return out


def _emit_report(report: B.CheckReport, fmt: str, out):
    if fmt == "machine":
        for line in report.machine_lines():
            print(line, file=out)
    else:
        print(report.table(), file=out)


def _gap(text: str) -> B.MonotoneFn:
    """A demo step function G read as the gap F(m) = m + G(m)."""
    F = B.MonotoneFn.parse(text)
    return F if F.shift else B.MonotoneFn(F.breakpoints, shift=True)


# --------------------------------------------------------------- subcommands


def _cmd_parse(cfg, out):
    f = _formula(cfg)
    if cfg.fmt == "machine":
        print(f"class={classify(f)}", file=out)
        print(f"formula={to_text(f)}", file=out)
        print(f"size={formula_size(f)}", file=out)
    else:
        print(to_text(f), file=out)
        print(f"repr:  {f!r}", file=out)
        print(f"class: {classify(f)}", file=out)
    return 0


def _cmd_eval(cfg, out):
    f = _formula(cfg)
    fam = _family(cfg)
    if not 0 <= cfg.index < len(fam):
        raise UsageError(f"--index {cfg.index} outside the family (length {len(fam)})")
    p = _pair(cfg, f)
    verdict = eval_bounded(fam.structures[cfg.index], p, env=_env(cfg))
    if cfg.fmt == "machine":
        print(f"a={encode(p.a)}", file=out)
        print(f"e={encode(p.e)}", file=out)
        print(f"verdict={str(verdict).lower()}", file=out)
    else:
        label = fam.structures[cfg.index].label or f"structure {cfg.index}"
        print(f"{label}: bounded satisfaction is {str(verdict).lower()}", file=out)
    return 0 if verdict else 1


def _cmd_compile(cfg, out):
    f = _formula(cfg)
    p = _pair(cfg, f)
    g = compile_fo(p, cap=cfg.size_cap)
    if cfg.fmt == "machine":
        print(f"size={formula_size(g)}", file=out)
    print(to_text(g), file=out)
    return 0


def _cmd_check(cfg, out):
    f = _formula(cfg)
    fam = _family(cfg)
    A = _bound(cfg.A, cfg.normalize_A)
    if A is None:
        raise UsageError("--A is required")
    report = B.check_family(fam, f, A, cfg.E_cap)
    _emit_report(report, cfg.fmt, out)
    return 0 if report.verdict else 1


CONVERGENCE = "/\\{n in N} \\/{m in N} /\\{k in N} D_n(c_m, c_{max(m,k)})"


def _cmd_metastable(cfg, out):
    if cfg.kind not in ("alternating", "parity"):
        raise UsageError("--family is 'alternating' or 'parity' for this demo")
    eps = Fraction(cfg.eps)
    F = _gap(cfg.F)
    fam = sequence_family(cfg.kind, cfg.count, 20 if cfg.tail_start is None else cfg.tail_start)
    direct = B.check_metastable(fam, eps, F, cfg.E_cap)
    conv = parse_formula(CONVERGENCE)
    via = B.check_family(fam, conv, B.BPair(B.epsilon_level(eps), F), cfg.E_cap)
    agree = direct.verdict == via.verdict
    if cfg.fmt == "machine":
        for line in direct.machine_lines() + via.machine_lines():
            print(line, file=out)
    else:
        print(f"family: {cfg.kind}, i in [0,{cfg.count}), eps={eps}, F(m)={F}", file=out)
        print("-- direct search over the distance data --", file=out)
        print(direct.table(), file=out)
        print("-- bounded semantics of the convergence sentence --", file=out)
        print(via.table(), file=out)
    if direct.verdict:
        m = direct.winner
        tail = sorted(direct.sat(m))
        print(f"verdict=true m={m} tail={tail[0]}..{tail[-1]} agree={str(agree).lower()}", file=out)
    else:
        print(f"verdict=false agree={str(agree).lower()}", file=out)
    return 0 if direct.verdict else 1


def _recurrence_sentence(colors: int) -> str:
    # some s and x with x, S^(s+1) x, S^(2s+2) x in one cell; written without
    # double negations, which inflate fragments
    cells = [f"~(U_{i}(x) /\\ U_{i}(S^{{s+1}}(x)) /\\ U_{i}(S^{{2*s+2}}(x)))" for i in range(colors)]
    return "~ /\\{s in N} forall x. (" + " /\\ ".join(cells) + ")"


def _cmd_recurrence(cfg, out):
    lo, _, hi = cfg.n_range.partition("..")
    ns = range(int(lo), int(hi) + 1)
    fam = FamilySpec(
        tuple(gen_cycle(n, coloring_cells(n, f"mod{cfg.colors}")) for n in ns),
        0 if cfg.tail_start is None else cfg.tail_start,
    )
    f = parse_formula(_recurrence_sentence(cfg.colors))
    report = B.check_family(fam, f, B.BStar(), cfg.E_cap)
    _emit_report(report, cfg.fmt, out)
    return 0 if report.verdict else 1


def run(cfg: RunConfig, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        if cfg.subcommand == "parse":
            return _cmd_parse(cfg, out)
        if cfg.subcommand == "eval":
            return _cmd_eval(cfg, out)
        if cfg.subcommand == "compile":
            return _cmd_compile(cfg, out)
        if cfg.subcommand == "check":
            return _cmd_check(cfg, out)
        if cfg.demo == "metastable":
            return _cmd_metastable(cfg, out)
        if cfg.demo == "recurrence":
            return _cmd_recurrence(cfg, out)
        raise UsageError(f"unknown demo {cfg.demo!r}")
    except (UsageError, FormulaError, FragmentError, StructureError, B.BoundError, B.CheckError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=err)
        return 2


# ------------------------------------------------------------------ argparse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", dest="fmt", choices=("table", "machine"), default="table")

    p = argparse.ArgumentParser(prog="boundsem", description="Bounded semantics for countable conjunctions.")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def formula_args(sp):
        sp.add_argument("formula", help="formula text, or @path to a file holding it")
        sp.add_argument("--sig", help="extra declarations, e.g. 'pred P 1; const a'")

    def pair_args(sp):
        sp.add_argument("--A", help="universal bound, e.g. nat:3 or 'pair:3;mono:0->1,5->9'")
        sp.add_argument("--E", help="existential bound, e.g. nat:2")
        sp.add_argument("--a-frag", help="universal fragment in canonical encoding")
        sp.add_argument("--e-frag", help="existential fragment in canonical encoding")
        sp.add_argument("--normalize-A", action="store_true", help="replace per-n functions by their pointwise max")

    sp = sub.add_parser("parse", parents=[common], help="print the desugared formula and its class")
    formula_args(sp)

    sp = sub.add_parser("eval", parents=[common], help="bounded evaluation on one structure")
    formula_args(sp)
    pair_args(sp)
    sp.add_argument("--family", required=True, help="family file")
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--env", action="append", default=[], help="variable assignment x=3 (repeatable)")

    sp = sub.add_parser("compile", parents=[common], help="emit the equivalent first-order formula")
    formula_args(sp)
    pair_args(sp)
    sp.add_argument("--size-cap", type=int, help="fail cleanly if the output exceeds this size")

    sp = sub.add_parser("check", parents=[common], help="search existential bounds across a family")
    formula_args(sp)
    sp.add_argument("--family", required=True)
    sp.add_argument("--A", required=True)
    sp.add_argument("--E-cap", type=int, default=20)
    sp.add_argument("--tail-start", type=int)
    sp.add_argument("--normalize-A", action="store_true")

    sp = sub.add_parser("demo", help="built-in demonstrations")
    demos = sp.add_subparsers(dest="demo", required=True)
    dm = demos.add_parser("metastable", parents=[common], help="sequence-space families")
    dm.add_argument("--family", dest="kind", choices=("alternating", "parity"), default="alternating")
    dm.add_argument("--eps", default="1/2")
    dm.add_argument("--F", default="mono:0->1", help="gap function G; the demo uses F(m) = m + G(m)")
    dm.add_argument("--count", type=int, default=40)
    dm.add_argument("--tail-start", type=int)
    dm.add_argument("--cap", dest="E_cap", type=int, default=20)
    dr = demos.add_parser("recurrence", parents=[common], help="colored cycles")
    dr.add_argument("--n-range", default="3..12")
    dr.add_argument("--colors", type=int, default=2)
    dr.add_argument("--tail-start", type=int)
    dr.add_argument("--cap", dest="E_cap", type=int, default=6)
    return p


def config_from_args(argv=None) -> RunConfig:
    ns = vars(build_parser().parse_args(argv))
    if "env" in ns:
        ns["env"] = tuple(ns["env"])
    return RunConfig(**{k: v for k, v in ns.items() if v is not None or k == "tail_start"})


def main(argv=None) -> int:
    try:
        cfg = config_from_args(argv)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
