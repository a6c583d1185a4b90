"""Formulas of the infinitary logic L_{w1,w}.

Countable conjunctions are templates: a single body with one index
metavariable.  Existentials, disjunctions and implications are desugared
by the parser, so every AST is built from Atomic, Not, Forall, BigAnd (over
the naturals) and And (finite).
"""
from __future__ import annotations

import re
from dataclasses import dataclass, fields
from functools import lru_cache
from typing import Iterable, Optional


class FormulaError(ValueError):
    pass


class ParseError(FormulaError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} at position {pos}")
        self.pos = pos


_FIELD_NAMES = {}


class _Node:
    """Structural equality with a cached hash; ASTs are compared and hashed a lot."""

    __slots__ = ()

    def _values(self):
        names = _FIELD_NAMES.get(type(self))
        if names is None:
            names = _FIELD_NAMES[type(self)] = tuple(f.name for f in fields(self))
        return tuple(getattr(self, n) for n in names)

    def __eq__(self, other):
        if self is other:
            return True
        if type(other) is not type(self):
            return NotImplemented
        # the cached hashes settle most unequal pairs without a deep walk
        return hash(self) == hash(other) and self._values() == other._values()

    def __hash__(self):
        h = self.__dict__.get("_hash")
        if h is None:
            h = hash((type(self).__name__,) + self._values())
            object.__setattr__(self, "_hash", h)
        return h


# ---------------------------------------------------------------- signatures


@dataclass(frozen=True)
class Symbol:
    name: str
    arity: int
    indexed: bool = False


@dataclass(frozen=True)
class Signature:
    predicates: tuple = ()
    functions: tuple = ()
    constants: tuple = ()

    def __post_init__(self):
        names = [s.name for s in self.predicates + self.functions + self.constants]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise FormulaError(f"symbol names declared twice: {sorted(dupes)}")
        for s in self.predicates + self.functions + self.constants:
            if s.arity < 0:
                raise FormulaError(f"negative arity for {s.name}")
        for s in self.constants:
            if s.arity != 0:
                raise FormulaError(f"constant {s.name} must have arity 0")

    def predicate(self, name):
        return _lookup(self.predicates, name)

    def function(self, name):
        return _lookup(self.functions, name)

    def constant(self, name):
        return _lookup(self.constants, name)

    def merge(self, other: "Signature") -> "Signature":
        def union(a, b):
            seen = {s.name: s for s in a}
            for s in b:
                if s.name in seen and seen[s.name] != s:
                    raise FormulaError(f"conflicting declarations for {s.name}")
                seen[s.name] = s
            return tuple(seen.values())

        return Signature(
            union(self.predicates, other.predicates),
            union(self.functions, other.functions),
            union(self.constants, other.constants),
        )

    @classmethod
    def parse(cls, text: str) -> "Signature":
        """Read declarations like ``pred D_ 2; const c_; fn S 1``.

        A trailing underscore marks an indexed family.
        """
        preds, fns, consts = [], [], []
        for decl in filter(None, (d.strip() for d in text.split(";"))):
            parts = decl.split()
            kind, raw = parts[0], parts[1] if len(parts) > 1 else ""
            indexed = raw.endswith("_")
            name = raw.rstrip("_")
            if not name:
                raise FormulaError(f"bad declaration {decl!r}")
            if kind == "const":
                consts.append(Symbol(name, 0, indexed))
            elif kind in ("pred", "fn"):
                if len(parts) != 3:
                    raise FormulaError(f"declaration {decl!r} needs an arity")
                sym = Symbol(name, int(parts[2]), indexed)
                (preds if kind == "pred" else fns).append(sym)
            else:
                raise FormulaError(f"unknown declaration kind {kind!r}")
        return cls(tuple(preds), tuple(fns), tuple(consts))


def _lookup(symbols, name):
    for s in symbols:
        if s.name == name:
            return s
    return None


DEFAULT_SIGNATURE = Signature.parse("pred D_ 2; const c_; pred U_ 1; fn S 1")


# ------------------------------------------------------------ index algebra


class IndexExpr(_Node):
    __slots__ = ()


@dataclass(frozen=True, eq=False)
class INat(IndexExpr):
    value: int


@dataclass(frozen=True, eq=False)
class IVar(IndexExpr):
    name: str


@dataclass(frozen=True, eq=False)
class IOp(IndexExpr):
    op: str  # '+', '*', 'max'
    left: IndexExpr
    right: IndexExpr


_IOPS = {"+": lambda a, b: a + b, "*": lambda a, b: a * b, "max": max}


def index_value(e: IndexExpr, env=None) -> int:
    if isinstance(e, INat):
        return e.value
    if isinstance(e, IVar):
        if env is None or e.name not in env:
            raise FormulaError(f"unbound index metavariable {e.name}")
        return env[e.name]
    return _IOPS[e.op](index_value(e.left, env), index_value(e.right, env))


def index_vars(e: IndexExpr) -> frozenset:
    if isinstance(e, INat):
        return frozenset()
    if isinstance(e, IVar):
        return frozenset([e.name])
    return index_vars(e.left) | index_vars(e.right)


def subst_index(e: IndexExpr, var: str, value: int) -> IndexExpr:
    if isinstance(e, INat):
        return e
    if isinstance(e, IVar):
        return INat(value) if e.name == var else e
    left, right = subst_index(e.left, var, value), subst_index(e.right, var, value)
    if isinstance(left, INat) and isinstance(right, INat):
        return INat(_IOPS[e.op](left.value, right.value))
    return IOp(e.op, left, right)


# --------------------------------------------------------------------- terms


class Term(_Node):
    __slots__ = ()


@dataclass(frozen=True, eq=False)
class Var(Term):
    name: str


@dataclass(frozen=True, eq=False)
class Const(Term):
    family: str
    index: Optional[IndexExpr] = None


@dataclass(frozen=True, eq=False)
class App(Term):
    family: str
    args: tuple
    index: Optional[IndexExpr] = None
    iterate: Optional[IndexExpr] = None  # f^k(x); unary functions only


# ------------------------------------------------------------------ formulas


class Formula(_Node):
    __slots__ = ()

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True, eq=False)
class Atomic(Formula):
    pred: str
    args: tuple
    index: Optional[IndexExpr] = None


@dataclass(frozen=True, eq=False)
class Not(Formula):
    body: Formula


@dataclass(frozen=True, eq=False)
class Forall(Formula):
    var: str
    body: Formula


@dataclass(frozen=True, eq=False)
class BigAnd(Formula):
    """Countable conjunction of ``body[var := i]`` over all naturals i."""

    var: str
    body: Formula


@dataclass(frozen=True, eq=False)
class And(Formula):
    """Finite conjunction; the parser only produces the binary form.

    ``And(())`` is the empty conjunction, printed ``true``.
    """

    parts: tuple


TRUE = And(())
FALSE = Not(TRUE)


def conj(parts: Iterable[Formula]) -> Formula:
    parts = list(parts)
    if not parts:
        return TRUE
    out = parts[-1]
    for p in reversed(parts[:-1]):
        out = And((p, out))
    return out


def disj(parts: Iterable[Formula]) -> Formula:
    return Not(conj(Not(p) for p in parts))


# ------------------------------------------------------------- substitution


def _subst_term(t: Term, var: str, value: int) -> Term:
    if isinstance(t, Var):
        return t
    if isinstance(t, Const):
        if t.index is None:
            return t
        return Const(t.family, subst_index(t.index, var, value))
    return App(
        t.family,
        tuple(_subst_term(a, var, value) for a in t.args),
        None if t.index is None else subst_index(t.index, var, value),
        None if t.iterate is None else subst_index(t.iterate, var, value),
    )


def _subst(f: Formula, var: str, value: int) -> Formula:
    if isinstance(f, Atomic):
        return Atomic(
            f.pred,
            tuple(_subst_term(a, var, value) for a in f.args),
            None if f.index is None else subst_index(f.index, var, value),
        )
    if isinstance(f, Not):
        return Not(_subst(f.body, var, value))
    if isinstance(f, Forall):
        return Forall(f.var, _subst(f.body, var, value))
    if isinstance(f, BigAnd):
        if f.var == var:  # shadowed
            return f
        return BigAnd(f.var, _subst(f.body, var, value))
    return And(tuple(_subst(p, var, value) for p in f.parts))


@lru_cache(maxsize=200_000)
def instantiate(f: Formula, metavar: str, value: int) -> Formula:
    """Replace ``metavar`` by ``value`` everywhere, folding closed index arithmetic."""
    if value < 0:
        raise FormulaError("index values are natural numbers")
    return _subst(f, metavar, value)


def component(f: Formula, i: int) -> Formula:
    """The i-th conjunct of a BigAnd or And node."""
    if isinstance(f, BigAnd):
        return instantiate(f.body, f.var, i)
    if isinstance(f, And):
        if not 0 <= i < len(f.parts):
            raise FormulaError(f"index {i} outside finite conjunction of {len(f.parts)}")
        return f.parts[i]
    raise FormulaError(f"not a conjunction: {f}")


def in_index_set(f: Formula, i: int) -> bool:
    if isinstance(f, BigAnd):
        return i >= 0
    return 0 <= i < len(f.parts)


# -------------------------------------------------------------- inspection


def _term_vars(t: Term) -> frozenset:
    if isinstance(t, Var):
        return frozenset([t.name])
    if isinstance(t, Const):
        return frozenset()
    return frozenset().union(*(_term_vars(a) for a in t.args))


@lru_cache(maxsize=100_000)
def free_vars(f: Formula) -> frozenset:
    if isinstance(f, Atomic):
        return frozenset().union(*(_term_vars(a) for a in f.args))
    if isinstance(f, Not):
        return free_vars(f.body)
    if isinstance(f, Forall):
        return free_vars(f.body) - {f.var}
    if isinstance(f, BigAnd):
        return free_vars(f.body)
    return frozenset().union(*(free_vars(p) for p in f.parts))


def _term_ivars(t: Term) -> frozenset:
    out = frozenset()
    if isinstance(t, Const):
        if t.index is not None:
            out = index_vars(t.index)
    elif isinstance(t, App):
        for e in (t.index, t.iterate):
            if e is not None:
                out |= index_vars(e)
        for a in t.args:
            out |= _term_ivars(a)
    return out


@lru_cache(maxsize=100_000)
def free_index_vars(f: Formula) -> frozenset:
    if isinstance(f, Atomic):
        out = frozenset() if f.index is None else index_vars(f.index)
        return out.union(*(_term_ivars(a) for a in f.args))
    if isinstance(f, (Not, Forall)):
        return free_index_vars(f.body)
    if isinstance(f, BigAnd):
        return free_index_vars(f.body) - {f.var}
    return frozenset().union(*(free_index_vars(p) for p in f.parts))


def strip_foralls(f: Formula) -> Formula:
    while isinstance(f, Forall):
        f = f.body
    return f


def is_first_order(f: Formula) -> bool:
    if isinstance(f, Atomic):
        return True
    if isinstance(f, (Not, Forall)):
        return is_first_order(f.body)
    if isinstance(f, BigAnd):
        return False
    return all(is_first_order(p) for p in f.parts)


def formula_size(f: Formula) -> int:
    if isinstance(f, Atomic):
        return 1
    if isinstance(f, (Not, Forall, BigAnd)):
        return 1 + formula_size(f.body)
    return 1 + sum(formula_size(p) for p in f.parts)


# ------------------------------------------------------------ classification


@dataclass(frozen=True)
class PrenexClass:
    kind: str  # 'FO', 'Pi', 'Sigma', 'General'
    n: int = 0

    def __str__(self):
        if self.kind in ("Pi", "Sigma"):
            return f"{self.kind}N({self.n})"
        return self.kind


FO = PrenexClass("FO")
GENERAL = PrenexClass("General")


def PiN(n: int) -> PrenexClass:
    return PrenexClass("Pi", n)


def SigmaN(n: int) -> PrenexClass:
    return PrenexClass("Sigma", n)


@lru_cache(maxsize=100_000)
def _levels(f: Formula) -> tuple:
    """Least (Pi, Sigma) levels; the hierarchy is taken to be cumulative."""
    if is_first_order(f):
        return (0, 0)
    if isinstance(f, Not):
        p, s = _levels(f.body)
        return (s, p)
    if isinstance(f, Forall):
        return _levels(f.body)
    if isinstance(f, BigAnd):
        _, s = _levels(f.body)
        return (s + 1, s + 2)
    lv = [_levels(p) for p in f.parts]
    return (max(p for p, _ in lv), max(s for _, s in lv))


def classify(f: Formula) -> PrenexClass:
    if is_first_order(f):
        return FO
    p, s = _levels(f)
    if min(p, s) > 3:
        return GENERAL
    return PiN(p) if p <= s else SigmaN(s)


# ------------------------------------------------------------------ printing


def _index_text(e: IndexExpr) -> str:
    if isinstance(e, INat):
        return str(e.value)
    if isinstance(e, IVar):
        return e.name
    return "{" + _iexpr_text(e) + "}"


def _iexpr_text(e: IndexExpr) -> str:
    if isinstance(e, INat):
        return str(e.value)
    if isinstance(e, IVar):
        return e.name
    if e.op == "max":
        return f"max({_iexpr_text(e.left)},{_iexpr_text(e.right)})"
    return f"({_iexpr_text(e.left)}{e.op}{_iexpr_text(e.right)})"


def _term_text(t: Term) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Const):
        return t.family if t.index is None else f"{t.family}_{_index_text(t.index)}"
    head = t.family
    if t.index is not None:
        head += "_" + _index_text(t.index)
    if t.iterate is not None:
        head += "^" + _index_text(t.iterate)
    return head + "(" + ",".join(_term_text(a) for a in t.args) + ")"


def _operand(f: Formula) -> str:
    s = to_text(f)
    return f"({s})" if isinstance(f, (Forall, BigAnd)) else s


def to_text(f: Formula) -> str:
    """Print in the input grammar, using only core connectives."""
    if isinstance(f, Atomic):
        head = f.pred if f.index is None else f"{f.pred}_{_index_text(f.index)}"
        if not f.args:
            return head
        return head + "(" + ",".join(_term_text(a) for a in f.args) + ")"
    if isinstance(f, Not):
        return "~" + _operand(f.body)
    if isinstance(f, Forall):
        return f"forall {f.var}. {to_text(f.body)}"
    if isinstance(f, BigAnd):
        return f"/\\{{{f.var} in N}} {to_text(f.body)}"
    if not f.parts:
        return "true"
    if len(f.parts) != 2:
        return to_text(conj(f.parts))
    return "(" + _operand(f.parts[0]) + " /\\ " + _operand(f.parts[1]) + ")"


# ------------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<bigand>/\\\{)|(?P<bigor>\\/\{)|(?P<and>/\\)|(?P<or>\\/)|(?P<imp>->)"
    r"|(?P<nat>\d+)|(?P<ident>[A-Za-z][A-Za-z0-9']*)|(?P<punct>[~().,_^+*{}]))"
)
_KEYWORDS = {"forall", "exists", "in", "true", "false"}


def _tokenize(text: str):
    pos, out = 0, []
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        value = m.group(kind)
        start = m.start(kind)
        if kind == "punct":
            kind = value
        out.append((kind, value, start))
        pos = m.end()
    out.append(("eof", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str, sig: Signature, allow_free_metavars: bool):
        self.toks = _tokenize(text)
        self.i = 0
        self.sig = sig
        self.allow_free = allow_free_metavars
        self.scope: list[str] = []

    # token helpers
    def peek(self, k=0):
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, kind, value=None):
        t = self.peek()
        return t[0] == kind and (value is None or t[1] == value)

    def take(self, kind, value=None):
        t = self.peek()
        if not self.at(kind, value):
            want = value or kind
            raise ParseError(f"expected {want!r}, found {t[1] or 'end of input'!r}", t[2])
        self.i += 1
        return t

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        raise ParseError(msg, tok[2])

    # formulas
    def formula(self):
        left = self.disjunction()
        if self.at("imp"):
            self.take("imp")
            right = self.formula()
            return Not(And((left, Not(right))))
        return left

    def disjunction(self):
        parts = [self.conjunction()]
        while self.at("or"):
            self.take("or")
            parts.append(self.conjunction())
        return disj(parts) if len(parts) > 1 else parts[0]

    def conjunction(self):
        parts = [self.unary()]
        while self.at("and"):
            self.take("and")
            parts.append(self.unary())
        return conj(parts)

    def unary(self):
        kind, value, pos = self.peek()
        if kind == "~":
            self.take("~")
            return Not(self.unary())
        if kind == "ident" and value in ("forall", "exists"):
            self.take("ident")
            var = self.object_var()
            self.take(".")
            body = self.formula()
            return Forall(var, body) if value == "forall" else Not(Forall(var, Not(body)))
        if kind in ("bigand", "bigor"):
            return self.big(kind)
        if kind == "(":
            self.take("(")
            f = self.formula()
            self.take(")")
            return f
        if kind == "ident" and value == "true":
            self.take("ident")
            return TRUE
        if kind == "ident" and value == "false":
            self.take("ident")
            return FALSE
        return self.atom()

    def object_var(self):
        tok = self.take("ident")
        name = tok[1]
        if name in _KEYWORDS or self.sig.constant(name) or self.sig.function(name) or self.sig.predicate(name):
            self.error(f"{name!r} cannot be used as a variable", tok)
        return name

    def big(self, kind):
        self.take(kind)
        tok = self.take("ident")
        var = tok[1]
        if var in _KEYWORDS:
            self.error(f"{var!r} cannot be an index variable", tok)
        self.take("ident", "in")
        itok = self.peek()
        if self.at("ident", "N"):
            self.take("ident")
            pair = False
        elif self.at("nat", "2"):
            self.take("nat")
            pair = True
        else:
            self.error("index set must be N or 2", itok)
        self.take("}")
        self.scope.append(var)
        body = self.formula()
        self.scope.pop()
        if kind == "bigor":
            body = Not(body)
        if pair:
            out = And((instantiate(body, var, 0), instantiate(body, var, 1)))
        else:
            out = BigAnd(var, body)
        return Not(out) if kind == "bigor" else out

    def atom(self):
        tok = self.take("ident")
        name = tok[1]
        sym = self.sig.predicate(name)
        if sym is None:
            self.error(f"undeclared predicate {name!r}", tok)
        index = self.maybe_index(sym, tok)
        args = self.maybe_args()
        if len(args) != sym.arity:
            self.error(f"predicate {name} expects {sym.arity} arguments, got {len(args)}", tok)
        return Atomic(name, tuple(args), index)

    def maybe_args(self):
        if not self.at("("):
            return []
        self.take("(")
        args = [self.term()]
        while self.at(","):
            self.take(",")
            args.append(self.term())
        self.take(")")
        return args

    def maybe_index(self, sym, tok):
        if self.at("_"):
            self.take("_")
            if not sym.indexed:
                self.error(f"{sym.name} is not an indexed family", tok)
            return self.index_atom()
        if sym.indexed:
            self.error(f"indexed family {sym.name} needs an index", tok)
        return None

    def term(self):
        tok = self.take("ident")
        name = tok[1]
        if self.sig.constant(name):
            sym = self.sig.constant(name)
            return Const(name, self.maybe_index(sym, tok))
        if self.sig.function(name):
            sym = self.sig.function(name)
            index = self.maybe_index(sym, tok)
            iterate = None
            if self.at("^"):
                self.take("^")
                if sym.arity != 1:
                    self.error(f"iteration only allowed on unary functions, {name} has arity {sym.arity}", tok)
                iterate = self.index_atom()
            self.take("(")
            args = [self.term()]
            while self.at(","):
                self.take(",")
                args.append(self.term())
            self.take(")")
            if len(args) != sym.arity:
                self.error(f"function {name} expects {sym.arity} arguments, got {len(args)}", tok)
            return App(name, tuple(args), index, iterate)
        if self.sig.predicate(name) or name in _KEYWORDS:
            self.error(f"{name!r} is not a term", tok)
        if self.at("_") or self.at("("):
            self.error(f"undeclared symbol {name!r}", tok)
        return Var(name)

    # index expressions
    def index_atom(self):
        kind, value, pos = self.peek()
        if kind == "nat":
            self.take("nat")
            return INat(int(value))
        if kind == "{" or kind == "(":
            close = "}" if kind == "{" else ")"
            self.take(kind)
            e = self.iexpr()
            self.take(close)
            return e
        if kind == "ident":
            return self.iprimary()
        self.error("expected an index expression")

    def iexpr(self):
        left = self.iterm()
        while self.at("+"):
            self.take("+")
            left = _fold("+", left, self.iterm())
        return left

    def iterm(self):
        left = self.iprimary()
        while self.at("*"):
            self.take("*")
            left = _fold("*", left, self.iprimary())
        return left

    def iprimary(self):
        kind, value, pos = self.peek()
        if kind == "nat":
            self.take("nat")
            return INat(int(value))
        if kind in ("(", "{"):
            close = "}" if kind == "{" else ")"
            self.take(kind)
            e = self.iexpr()
            self.take(close)
            return e
        if kind == "ident" and value == "max" and self.peek(1)[0] == "(":
            self.take("ident")
            self.take("(")
            a = self.iexpr()
            self.take(",")
            b = self.iexpr()
            self.take(")")
            return _fold("max", a, b)
        if kind == "ident":
            self.take("ident")
            if value not in self.scope and not self.allow_free:
                self.error(f"free index metavariable {value!r}")
            return IVar(value)
        self.error("expected an index expression")


def _fold(op, a, b):
    if isinstance(a, INat) and isinstance(b, INat):
        return INat(_IOPS[op](a.value, b.value))
    return IOp(op, a, b)


def parse_formula(text: str, sig: Signature = DEFAULT_SIGNATURE, *, allow_free_metavars: bool = False) -> Formula:
    p = _Parser(text, sig, allow_free_metavars)
    f = p.formula()
    if not p.at("eof"):
        p.error(f"unexpected {p.peek()[1]!r}")
    return f


def signature_of(f: Formula) -> Signature:
    """Smallest signature declaring every symbol used in ``f``."""
    preds, fns, consts = {}, {}, {}

    def term(t):
        if isinstance(t, Const):
            consts[t.family] = Symbol(t.family, 0, t.index is not None)
        elif isinstance(t, App):
            fns[t.family] = Symbol(t.family, len(t.args), t.index is not None)
            for a in t.args:
                term(a)

    def walk(g):
        if isinstance(g, Atomic):
            preds[g.pred] = Symbol(g.pred, len(g.args), g.index is not None)
            for a in g.args:
                term(a)
        elif isinstance(g, (Not, Forall, BigAnd)):
            walk(g.body)
        else:
            for p in g.parts:
                walk(p)

    walk(f)
    return Signature(tuple(preds.values()), tuple(fns.values()), tuple(consts.values()))
