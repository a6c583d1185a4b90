"""Finite first-order structures, Tarskian evaluation, and structure families."""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Optional

from .logic import (
    And,
    Atomic,
    BigAnd,
    Const,
    Forall,
    Formula,
    Not,
    Term,
    Var,
    index_value,
)


class StructureError(ValueError):
    pass


class FamilyFormatError(StructureError):
    pass


# --------------------------------------------------------------------- rules


@dataclass(frozen=True)
class DistanceRule:
    """``D_n(x, y)`` iff ``d(x, y) < 1/n``; ``D_0`` always holds."""

    matrix: tuple

    def __post_init__(self):
        n = len(self.matrix)
        for r, row in enumerate(self.matrix):
            if len(row) != n:
                raise StructureError(f"distance matrix row {r} has {len(row)} entries, expected {n}")
            for c, d in enumerate(row):
                if not isinstance(d, Fraction):
                    raise StructureError("distances must be exact rationals")
                if d < 0 or d > 1:
                    raise StructureError(f"distance d({r},{c})={d} outside [0,1]")
                if d != self.matrix[c][r]:
                    raise StructureError(f"distance matrix not symmetric at ({r},{c})")
            if row[r] != 0:
                raise StructureError(f"nonzero self-distance at {r}")

    def distance(self, x: int, y: int) -> Fraction:
        return self.matrix[x][y]

    def holds(self, index: int, args) -> bool:
        x, y = args
        return index == 0 or self.matrix[x][y] < Fraction(1, index)


@dataclass(frozen=True)
class SequenceRule:
    """A sequence given by a finite prefix followed by a repeating block."""

    prefix: tuple
    block: tuple

    def __post_init__(self):
        if not self.block:
            raise StructureError("sequence tail block must be non-empty")

    def value(self, k: int) -> int:
        if k < len(self.prefix):
            return self.prefix[k]
        return self.block[(k - len(self.prefix)) % len(self.block)]

    def values(self):
        return set(self.prefix) | set(self.block)


@dataclass(frozen=True)
class PartitionRule:
    """``U_i(x)`` iff x lies in cell i; cells beyond the partition are empty."""

    cells: tuple

    def holds(self, index: int, args) -> bool:
        return index < len(self.cells) and args[0] in self.cells[index]


# ----------------------------------------------------------------- structure


@dataclass(frozen=True)
class Structure:
    size: int
    label: str = ""
    pred_tables: Mapping = field(default_factory=dict)  # (family, index|None) -> frozenset of tuples
    pred_rules: Mapping = field(default_factory=dict)  # family -> rule with .holds(index, args)
    fn_tables: Mapping = field(default_factory=dict)  # (family, index|None) -> {args: value}
    const_tables: Mapping = field(default_factory=dict)  # (family, index|None) -> element
    const_rules: Mapping = field(default_factory=dict)  # family -> rule with .value(index)

    def __post_init__(self):
        if self.size < 1:
            raise StructureError(f"{self.label}: universe must be non-empty")
        self.validate()

    def validate(self):
        n = self.size
        where = self.label or "structure"
        for (fam, idx), rows in self.pred_tables.items():
            for row in rows:
                bad = [x for x in row if not 0 <= x < n]
                if bad:
                    raise StructureError(
                        f"{where}: pred {_name(fam, idx)} row {row}: element {bad[0]} outside universe 0..{n - 1}"
                    )
        for (fam, idx), table in self.fn_tables.items():
            arity = len(next(iter(table))) if table else 0
            for args in itertools.product(range(n), repeat=arity):
                if args not in table:
                    raise StructureError(f"{where}: fn {_name(fam, idx)} undefined at {args}")
            for args, v in table.items():
                if not all(0 <= x < n for x in args) or not 0 <= v < n:
                    raise StructureError(f"{where}: fn {_name(fam, idx)} entry {args}->{v} outside universe")
        for (fam, idx), v in self.const_tables.items():
            if not 0 <= v < n:
                raise StructureError(f"{where}: const {_name(fam, idx)} = {v} outside universe")
        for fam, rule in self.const_rules.items():
            if isinstance(rule, SequenceRule):
                bad = [v for v in rule.values() if not 0 <= v < n]
                if bad:
                    raise StructureError(f"{where}: sequence {fam} takes value {bad[0]} outside universe")
        for fam, rule in self.pred_rules.items():
            if isinstance(rule, DistanceRule) and len(rule.matrix) != n:
                raise StructureError(f"{where}: distance matrix size {len(rule.matrix)} != universe {n}")
        # rule and table must agree wherever both are given
        for (fam, idx), rows in self.pred_tables.items():
            rule = self.pred_rules.get(fam)
            if rule is None or idx is None:
                continue
            arity = len(next(iter(rows))) if rows else None
            if arity is None:
                arity = 2 if isinstance(rule, DistanceRule) else 1
            for args in itertools.product(range(n), repeat=arity):
                if (args in rows) != rule.holds(idx, args):
                    raise StructureError(f"{where}: table for {_name(fam, idx)} disagrees with rule at {args}")
        for (fam, idx), v in self.const_tables.items():
            rule = self.const_rules.get(fam)
            if rule is not None and idx is not None and rule.value(idx) != v:
                raise StructureError(f"{where}: const {_name(fam, idx)} disagrees with rule")

    # interpretation lookups
    def holds(self, family: str, index: Optional[int], args: tuple) -> bool:
        rows = self.pred_tables.get((family, index))
        if rows is not None:
            return args in rows
        rule = self.pred_rules.get(family)
        if rule is not None and index is not None:
            return rule.holds(index, args)
        raise StructureError(f"{self.label or 'structure'}: no interpretation for predicate {_name(family, index)}")

    def const(self, family: str, index: Optional[int]) -> int:
        v = self.const_tables.get((family, index))
        if v is not None:
            return v
        rule = self.const_rules.get(family)
        if rule is not None and index is not None:
            return rule.value(index)
        raise StructureError(f"{self.label or 'structure'}: no interpretation for constant {_name(family, index)}")

    def apply(self, family: str, index: Optional[int], args: tuple) -> int:
        table = self.fn_tables.get((family, index))
        if table is None:
            raise StructureError(f"{self.label or 'structure'}: no interpretation for function {_name(family, index)}")
        return table[args]

    @property
    def metric(self) -> Optional[DistanceRule]:
        rule = self.pred_rules.get("D")
        return rule if isinstance(rule, DistanceRule) else None


def _name(fam, idx):
    return fam if idx is None else f"{fam}_{idx}"


# ---------------------------------------------------------------- evaluation


def eval_term(M: Structure, t: Term, env: Mapping[str, int]) -> int:
    if isinstance(t, Var):
        try:
            return env[t.name]
        except KeyError:
            raise StructureError(f"variable {t.name} not assigned") from None
    if isinstance(t, Const):
        idx = None if t.index is None else index_value(t.index)
        return M.const(t.family, idx)
    idx = None if t.index is None else index_value(t.index)
    args = tuple(eval_term(M, a, env) for a in t.args)
    times = 1 if t.iterate is None else index_value(t.iterate)
    if t.iterate is None:
        return M.apply(t.family, idx, args)
    x = args[0]
    for _ in range(times):
        x = M.apply(t.family, idx, (x,))
    return x


def eval_fo(M: Structure, f: Formula, env: Optional[Mapping[str, int]] = None) -> bool:
    """Standard satisfaction of a first-order formula over a finite structure."""
    env = dict(env or {})
    return _eval(M, f, env)


def _eval(M, f, env):
    if isinstance(f, Atomic):
        idx = None if f.index is None else index_value(f.index)
        return M.holds(f.pred, idx, tuple(eval_term(M, a, env) for a in f.args))
    if isinstance(f, Not):
        return not _eval(M, f.body, env)
    if isinstance(f, Forall):
        saved = env.get(f.var, _MISSING)
        try:
            for u in range(M.size):
                env[f.var] = u
                if not _eval(M, f.body, env):
                    return False
            return True
        finally:
            if saved is _MISSING:
                env.pop(f.var, None)
            else:
                env[f.var] = saved
    if isinstance(f, And):
        return all(_eval(M, p, env) for p in f.parts)
    if isinstance(f, BigAnd):
        raise StructureError("eval_fo needs a first-order formula; found a countable conjunction")
    raise TypeError(f"not a formula: {f!r}")


_MISSING = object()


# ---------------------------------------------------------------- generators

SEQUENCE_KINDS = ("alternating", "parity", "custom")


def gen_cycle(n: int, parts, label: str = "") -> Structure:
    """``([0,n), S, U_0, ..., U_r)`` with S the successor mod n."""
    cells = tuple(frozenset(p) for p in parts)
    seen = [x for c in cells for x in c]
    if sorted(seen) != list(range(n)):
        raise StructureError(f"cells {[sorted(c) for c in cells]} do not partition 0..{n - 1}")
    return Structure(
        size=n,
        label=label or f"cycle{n}",
        fn_tables={("S", None): {(x,): (x + 1) % n for x in range(n)}},
        pred_rules={"U": PartitionRule(cells)},
    )


def coloring_cells(n: int, spec: str):
    """Cells for a coloring spec: ``mod<r>`` (x mod r) or ``block<r>`` (r contiguous blocks)."""
    m = re.fullmatch(r"(mod|block)(\d+)", spec)
    if not m:
        raise StructureError(f"unknown coloring {spec!r}")
    r = int(m.group(2))
    if r < 1:
        raise StructureError("coloring needs at least one color")
    if m.group(1) == "mod":
        color = [x % r for x in range(n)]
    else:
        width = -(-n // r)
        color = [x // width for x in range(n)]
    return [[x for x in range(n) if color[x] == c] for c in range(r)]


def gen_sequence_space(i: int, kind: str = "alternating", custom: Optional[dict] = None) -> Structure:
    """Pseudo-metric space with a sequence ``c_k``, read through predicates ``D_n``.

    ``custom`` takes ``matrix`` (rows of rationals), ``prefix`` and ``block``.
    """
    one = Fraction(1)
    if kind == "alternating":
        matrix = ((Fraction(0), one), (one, Fraction(0)))
        # a_k = 1 if k < i or k even, else 0
        seq = SequenceRule(tuple([1] * i), (1, 0) if i % 2 == 0 else (0, 1))
    elif kind == "parity":
        matrix = ((Fraction(0), one), (one, Fraction(0)))
        seq = SequenceRule((), (0, 1))
    elif kind == "custom":
        if custom is None:
            raise StructureError("custom sequence space needs a description")
        matrix = tuple(tuple(Fraction(d) for d in row) for row in custom["matrix"])
        seq = SequenceRule(tuple(custom.get("prefix", ())), tuple(custom["block"]))
    else:
        raise StructureError(f"unknown sequence-space kind {kind!r}")
    return Structure(
        size=len(matrix),
        label=f"{kind}[{i}]",
        pred_rules={"D": DistanceRule(matrix)},
        const_rules={"c": seq},
    )


# ----------------------------------------------------------------- families


@dataclass(frozen=True)
class FamilySpec:
    """A finite prefix of a sequence of structures; indices >= tail_start stand in for "cofinitely many"."""

    structures: tuple
    tail_start: int = 0

    def __post_init__(self):
        if not self.structures:
            raise StructureError("a family needs at least one structure")
        if not 0 <= self.tail_start < len(self.structures):
            raise StructureError(f"tail-start {self.tail_start} outside prefix of length {len(self.structures)}")

    def __len__(self):
        return len(self.structures)

    @property
    def tail(self) -> frozenset:
        return frozenset(range(self.tail_start, len(self.structures)))


def sequence_family(kind: str, count: int, tail_start: int) -> FamilySpec:
    return FamilySpec(tuple(gen_sequence_space(i, kind) for i in range(count)), tail_start)


_RANGE = re.compile(r"(\d+)\.\.(\d+)$")


def _parse_range(text, lineno):
    m = _RANGE.match(text)
    if not m:
        raise FamilyFormatError(f"line {lineno}: expected a range a..b, got {text!r}")
    a, b = int(m.group(1)), int(m.group(2))
    if b < a:
        raise FamilyFormatError(f"line {lineno}: empty range {text}")
    return range(a, b + 1)


def _parse_name(text):
    if "_" in text:
        fam, idx = text.split("_", 1)
        return fam, int(idx)
    return text, None


def _parse_tuples(body, lineno):
    rows = set()
    for tok in re.findall(r"\([^)]*\)|\d+", body):
        if tok.startswith("("):
            inner = tok[1:-1].strip()
            rows.add(tuple(int(x) for x in inner.split(",")) if inner else ())
        else:
            rows.add((int(tok),))
    return frozenset(rows)


class _Draft:
    def __init__(self, label, lineno):
        self.label, self.lineno = label, lineno
        self.size = None
        self.pred_tables, self.pred_rules = {}, {}
        self.fn_tables, self.const_tables, self.const_rules = {}, {}, {}

    def build(self):
        if self.size is None:
            raise FamilyFormatError(f"structure {self.label}: missing universe")
        try:
            return Structure(
                size=self.size,
                label=self.label,
                pred_tables=self.pred_tables,
                pred_rules=self.pred_rules,
                fn_tables=self.fn_tables,
                const_tables=self.const_tables,
                const_rules=self.const_rules,
            )
        except StructureError as exc:
            msg = str(exc)
            if not msg.startswith(self.label):
                msg = f"{self.label}: {msg}"
            raise FamilyFormatError(msg) from None


def parse_family(text: str) -> FamilySpec:
    structures, draft, tail_start = [], None, 0

    def flush():
        nonlocal draft
        if draft is not None:
            structures.append(draft.build())
            draft = None

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        rest = rest.strip()
        try:
            if head == "structure":
                flush()
                draft = _Draft(rest or f"s{len(structures)}", lineno)
            elif head == "tail-start":
                tail_start = int(rest)
            elif head == "cycle":
                flush()
                m = re.fullmatch(r"(\S+)(?:\s+coloring\s+(\S+))?", rest)
                if not m:
                    raise FamilyFormatError(f"line {lineno}: expected 'cycle a..b [coloring <spec>]'")
                for n in _parse_range(m.group(1), lineno):
                    structures.append(gen_cycle(n, coloring_cells(n, m.group(2) or "mod1"), f"cycle{n}"))
            elif head == "seqspace":
                flush()
                kind, _, rng = rest.partition(" ")
                for i in _parse_range(rng.strip(), lineno):
                    structures.append(gen_sequence_space(i, kind))
            elif draft is None:
                raise FamilyFormatError(f"line {lineno}: {head!r} outside a structure stanza")
            else:
                _stanza_line(draft, head, rest, lineno)
        except FamilyFormatError:
            raise
        except (StructureError, ValueError, IndexError) as exc:
            where = f"structure {draft.label}, " if draft is not None else ""
            raise FamilyFormatError(f"{where}line {lineno}: {exc}") from None
    flush()
    try:
        return FamilySpec(tuple(structures), tail_start)
    except StructureError as exc:
        raise FamilyFormatError(str(exc)) from None


def _stanza_line(draft, head, rest, lineno):
    if head == "universe":
        draft.size = int(rest)
    elif head == "pred":
        m = re.fullmatch(r"(\S+)\s*\{(.*)\}", rest)
        if not m:
            raise FamilyFormatError(f"line {lineno}: expected 'pred <name> {{ tuples }}'")
        draft.pred_tables[_parse_name(m.group(1))] = _parse_tuples(m.group(2), lineno)
    elif head == "fn":
        m = re.fullmatch(r"(\S+)\s*\{(.*)\}", rest)
        if not m:
            raise FamilyFormatError(f"line {lineno}: expected 'fn <name> {{ x->y ... }}'")
        table = {}
        for lhs, rhs in re.findall(r"(\([^)]*\)|\d+)\s*->\s*(\d+)", m.group(2)):
            args = tuple(int(x) for x in lhs.strip("()").split(",")) if lhs.startswith("(") else (int(lhs),)
            table[args] = int(rhs)
        draft.fn_tables[_parse_name(m.group(1))] = table
    elif head == "const":
        name, value = rest.replace("=", " ").split()
        draft.const_tables[_parse_name(name)] = int(value)
    elif head == "rule":
        kind, _, body = rest.partition(" ")
        if kind == "dist":
            rows = [r.split() for r in body.split(";") if r.strip()]
            draft.pred_rules["D"] = DistanceRule(tuple(tuple(Fraction(x) for x in r) for r in rows))
        elif kind == "seq":
            m = re.fullmatch(r"(\w+)\s+prefix\s*\[([^\]]*)\]\s+tail\s+(periodic|const)\s+(\d+)", body)
            if not m:
                raise FamilyFormatError(f"line {lineno}: bad sequence rule")
            prefix = tuple(int(x) for x in m.group(2).split())
            if m.group(3) == "const":
                block = (int(m.group(4)),)
            else:
                p = int(m.group(4))
                if not 1 <= p <= len(prefix):
                    raise FamilyFormatError(f"line {lineno}: period {p} needs a prefix of at least {p} values")
                block = prefix[len(prefix) - p:]
            draft.const_rules[m.group(1)] = SequenceRule(prefix, block)
        else:
            raise FamilyFormatError(f"line {lineno}: unknown rule {kind!r}")
    else:
        raise FamilyFormatError(f"line {lineno}: unknown directive {head!r}")


def load_family(path) -> FamilySpec:
    return parse_family(Path(path).read_text(encoding="utf-8"))
