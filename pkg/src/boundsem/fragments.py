"""Finite bound fragments and their calculus.

A fragment space is fixed by a role ('A' for the universal side, 'E' for the
existential side) and a formula node.  Spaces are normalized so that only
four shapes remain:

* ``star``  atomic nodes, the one-point space ``{*}``
* ``fn``    (A, ~psi): finite partial maps from (A, psi) to (E, psi)
* ``imap``  (A, conjunction): finite maps index -> (A, psi_i)
* ``cset``  (E, conjunction): at most one (E, psi_i) component per index

(E, ~psi) is the space (A, psi), and universal quantifiers are transparent.
"""
from __future__ import annotations

import itertools
import re
import weakref
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping

from .logic import And, Atomic, BigAnd, Formula, Not, _Node, component, in_index_set, strip_foralls


class FragmentError(ValueError):
    pass


class ShapeError(FragmentError):
    """The candidate does not even have the layout of the space."""


class PreconditionError(FragmentError):
    pass


# --------------------------------------------------------------------- kinds


@dataclass(frozen=True)
class Kind:
    role: str
    node: Formula

    def __post_init__(self):
        if self.role not in ("A", "E"):
            raise FragmentError(f"role must be 'A' or 'E', got {self.role!r}")

    # derived kinds are memoized on the instance: cache lookups keyed by
    # equal but distinct formula nodes would otherwise walk the whole tree

    def _memo(self, name, make):
        d = self.__dict__
        if name not in d:
            object.__setattr__(self, name, make())
        return d[name]

    @property
    def tag(self) -> str:
        return self._memo("_tag", lambda: _tag(self))

    @property
    def key(self) -> "Kind":
        return self._memo("_key", lambda: kind_of("A", self.node.body))

    @property
    def val(self) -> "Kind":
        return self._memo("_val", lambda: kind_of("E", self.node.body))

    def comp(self, i: int) -> "Kind":
        comps = self._memo("_comps", dict)
        k = comps.get(i)
        if k is None:
            k = comps[i] = _comp(self, i)
        return k

    def admits(self, i: int) -> bool:
        return in_index_set(self.node, i)


@lru_cache(maxsize=None)
def _tag(k: Kind) -> str:
    n = k.node
    if isinstance(n, Atomic):
        return "star"
    if isinstance(n, Not):
        return "fn"
    if isinstance(n, (BigAnd, And)):
        return "imap" if k.role == "A" else "cset"
    raise FragmentError(f"unexpected node {n!r}")


@lru_cache(maxsize=None)
def _comp(k: Kind, i: int) -> Kind:
    if not in_index_set(k.node, i):
        raise ShapeError(f"index {i} outside the index set")
    return kind_of(k.role, component(k.node, i))


@lru_cache(maxsize=None)
def kind_of(role: str, f: Formula) -> Kind:
    f = strip_foralls(f)
    while role == "E" and isinstance(f, Not):
        role, f = "A", strip_foralls(f.body)
    return Kind(role, f)


# ----------------------------------------------------------------- fragments


class Fragment(_Node):
    __slots__ = ()

    def __str__(self):
        return encode(self)

    def __repr__(self):
        return f"<{encode(self)}>"


@dataclass(frozen=True, eq=False)
class Star(Fragment):
    pass


STAR = Star()


class _Table(Fragment):
    __slots__ = ()

    @property
    def table(self) -> dict:
        t = self.__dict__.get("_table")
        if t is None:
            t = dict(self.entries)
            object.__setattr__(self, "_table", t)
        return t

    @property
    def dom(self) -> tuple:
        d = self.__dict__.get("_dom")
        if d is None:
            d = tuple(k for k, _ in self.entries)
            object.__setattr__(self, "_dom", d)
        return d

    def __getitem__(self, k):
        return self.table[k]

    def __contains__(self, k):
        return k in self.table

    def __len__(self):
        return len(self.entries)


_INTERNED = weakref.WeakValueDictionary()


class _Interned(_Table):
    """Equal tables are one object, so equality and cache lookups stop at identity."""

    __slots__ = ()

    def __new__(cls, entries=()):
        key = (cls, entries)
        obj = _INTERNED.get(key)
        if obj is None:
            obj = object.__new__(cls)
            _INTERNED[key] = obj
        return obj


@dataclass(frozen=True, eq=False)
class FnMap(_Interned):
    """Finite partial function; entries sorted by key encoding."""

    entries: tuple = ()


@dataclass(frozen=True, eq=False)
class IndexMap(_Interned):
    entries: tuple = ()


@dataclass(frozen=True, eq=False)
class CompSet(_Interned):
    """A component set, held as index -> component (at most one per index)."""

    entries: tuple = ()


@dataclass(frozen=True, eq=False)
class ConstFn(_Table):
    """The function fragment sending every g <= base to ``value``.

    Its domain is the whole down-set of ``base``, which can be exponentially
    large; entries are only listed when an operation asks for them.
    """

    key_kind: Kind
    base: Fragment
    value: Fragment

    def _values(self):
        return (self.base, self.value)

    @property
    def entries(self) -> tuple:
        e = self.__dict__.get("_entries")
        if e is None:
            e = tuple(sorted(((x, self.value) for x in _below(self.key_kind, self.base)), key=lambda kv: encode(kv[0])))
            object.__setattr__(self, "_entries", e)
        return e

    def __contains__(self, k):
        if "_entries" not in self.__dict__ and isinstance(k, Fragment):
            return _shape_ok(self.key_kind, k) and _valid(self.key_kind, k) and _leq(self.key_kind, k, self.base)
        return k in self.table

    def __getitem__(self, k):
        if k in self:
            return self.value
        raise KeyError(k)


MATERIALIZE_LIMIT = 256


def const_fn(k: Kind, base: Fragment, value: Fragment):
    """Constant fragment at an (A, ~psi) kind over the down-set of ``base``.

    Small down-sets are listed as an ordinary FnMap, so that equal maps
    compare equal; large ones stay implicit.
    """
    if k.tag != "fn":
        raise ShapeError("constant function fragments live at (A, ~psi) kinds")
    if _below_bound(k.key, base) <= MATERIALIZE_LIMIT:
        return FnMap(tuple(sorted(((x, value) for x in _below(k.key, base)), key=lambda kv: encode(kv[0]))))
    return ConstFn(k.key, base, value)


@lru_cache(maxsize=None)
def _below_bound(k: Kind, f: Fragment) -> int:
    """Cheap upper bound on the number of g <= f, saturating just above the limit."""
    cap = MATERIALIZE_LIMIT + 1
    tag = k.tag
    if tag == "star":
        return 1
    n = 1
    if tag == "fn":
        if isinstance(f, ConstFn):
            per = _below_bound(k.val, f.value)
            return 1 if per == 1 else cap
        for _, v in f.entries:
            n = min(cap, n * _below_bound(k.val, v))
        return n
    for i, v in f.entries:
        b = _below_bound(k.comp(i), v)
        n = min(cap, n * (b + 1 if tag == "imap" else b))
    return n


def is_fn(f) -> bool:
    return isinstance(f, (FnMap, ConstFn))


def fnmap(items) -> FnMap:
    pairs = list(items.items()) if isinstance(items, Mapping) else list(items)
    keys = [k for k, _ in pairs]
    if len(set(keys)) != len(keys):
        raise ShapeError("duplicate key in function fragment")
    return FnMap(tuple(sorted(pairs, key=lambda kv: encode(kv[0]))))


def _indexed(items):
    pairs = list(items.items()) if isinstance(items, Mapping) else list(items)
    idx = [i for i, _ in pairs]
    if len(set(idx)) != len(idx):
        raise ShapeError("duplicate index")
    if any(not isinstance(i, int) or i < 0 for i in idx):
        raise ShapeError("indices must be natural numbers")
    return tuple(sorted(pairs, key=lambda kv: kv[0]))


def imap(items) -> IndexMap:
    return IndexMap(_indexed(items))


def cset(items) -> CompSet:
    return CompSet(_indexed(items))


# ------------------------------------------------------------------ encoding


@lru_cache(maxsize=None)
def encode(f: Fragment) -> str:
    if isinstance(f, Star):
        return "*"
    if isinstance(f, ConstFn):
        return f"(fnc {encode(f.base)} {encode(f.value)})"
    head = {FnMap: "fn", IndexMap: "imap", CompSet: "cset"}[type(f)]
    if isinstance(f, FnMap):
        body = "".join(f" ({encode(k)} {encode(v)})" for k, v in f.entries)
    else:
        body = "".join(f" ({i} {encode(v)})" for i, v in f.entries)
    return f"({head}{body})"


_SEXP = re.compile(r"\s*(\(|\)|\*|[A-Za-z]+|\d+)")


def decode(text: str, kind: "Kind | None" = None) -> Fragment:
    """Parse the canonical encoding; ``(fnc base value)`` needs the (A, ~psi) kind it lives at."""
    toks, pos = [], 0
    text = text.strip()
    while pos < len(text):
        m = _SEXP.match(text, pos)
        if not m:
            raise FragmentError(f"bad fragment encoding at position {pos}")
        toks.append(m.group(1))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    out, i = _read(toks, 0, kind)
    if i != len(toks):
        raise FragmentError("trailing input after fragment")
    return out


def _read(toks, i, kind=None):
    if i >= len(toks):
        raise FragmentError("unexpected end of fragment")
    t = toks[i]
    if t == "*":
        return STAR, i + 1
    if t != "(" or i + 1 >= len(toks):
        raise FragmentError(f"unexpected token {t!r}")
    head = toks[i + 1]
    if head == "fnc":
        if kind is None or kind.tag != "fn":
            raise FragmentError("a constant function fragment can only be decoded against its kind")
        base, i = _read(toks, i + 2, kind.key)
        value, i = _read(toks, i, kind.val)
        if i >= len(toks) or toks[i] != ")":
            raise FragmentError("expected ')'")
        return const_fn(kind, base, value), i + 1
    if head not in ("fn", "imap", "cset"):
        raise FragmentError(f"unknown fragment tag {head!r}")
    i += 2
    pairs = []
    while i < len(toks) and toks[i] == "(":
        if head == "fn":
            k, i = _read(toks, i + 1, kind.key if kind is not None and kind.tag == "fn" else None)
        else:
            if i + 1 >= len(toks) or not toks[i + 1].isdigit():
                raise FragmentError("expected an index")
            k, i = int(toks[i + 1]), i + 2
        sub = None
        if kind is not None:
            if head == "fn" and kind.tag == "fn":
                sub = kind.val
            elif head != "fn" and kind.tag in ("imap", "cset") and kind.admits(k):
                sub = kind.comp(k)
        v, i = _read(toks, i, sub)
        if i >= len(toks) or toks[i] != ")":
            raise FragmentError("expected ')'")
        pairs.append((k, v))
        i += 1
    if i >= len(toks) or toks[i] != ")":
        raise FragmentError("expected ')'")
    build = {"fn": fnmap, "imap": imap, "cset": cset}[head]
    return build(pairs), i + 1


def depth(f: Fragment) -> int:
    if isinstance(f, Star):
        return 0
    if isinstance(f, ConstFn):
        return 1 + max(depth(f.base), depth(f.value))
    children = [v for _, v in f.entries]
    if isinstance(f, FnMap):
        children += [k for k, _ in f.entries]
    return 1 + max((depth(c) for c in children), default=0)


def size(f: Fragment) -> int:
    if isinstance(f, Star):
        return 1
    if isinstance(f, ConstFn):
        return 1 + size(f.base) + size(f.value)
    n = 1 + sum(size(v) for _, v in f.entries)
    if isinstance(f, FnMap):
        n += sum(size(k) for k, _ in f.entries)
    return n


# --------------------------------------------------------------------- shape

_CLASS = {"star": Star, "fn": FnMap, "imap": IndexMap, "cset": CompSet}


@lru_cache(maxsize=None)
def _shape_ok(k: Kind, f: Fragment) -> bool:
    tag = k.tag
    if tag == "fn" and isinstance(f, ConstFn):
        return f.key_kind == k.key and _shape_ok(k.key, f.base) and _shape_ok(k.val, f.value)
    if type(f) is not _CLASS[tag]:
        return False
    if tag == "star":
        return True
    if tag == "fn":
        return all(_shape_ok(k.key, a) and _shape_ok(k.val, b) for a, b in f.entries)
    return all(k.admits(i) and _shape_ok(k.comp(i), v) for i, v in f.entries)


def check_shape(k: Kind, f: Fragment) -> None:
    if not _shape_ok(k, f):
        raise ShapeError(f"{encode(f)} does not have the layout of a {k.tag} fragment")


def _check_all(k, *fs):
    for f in fs:
        check_shape(k, f)


# ------------------------------------------------------------------ orderings


@lru_cache(maxsize=None)
def _sub(k: Kind, f: Fragment, g: Fragment) -> bool:
    tag = k.tag
    if tag == "star" or f is g:
        return True
    if tag == "fn":
        if isinstance(f, ConstFn) and isinstance(g, ConstFn) and f.base == g.base:
            return _sub(k.val, f.value, g.value)
        gt = g.table
        return all(a in gt and _sub(k.val, b, gt[a]) for a, b in f.entries)
    if tag == "imap":
        if f.dom != g.dom:
            return False
        return all(_sub(k.comp(i), v, g.table[i]) for i, v in f.entries)
    gt = g.table
    return all(i in gt and _sub(k.comp(i), v, gt[i]) for i, v in f.entries)


@lru_cache(maxsize=None)
def _leq(k: Kind, f: Fragment, g: Fragment) -> bool:
    tag = k.tag
    if tag == "star" or f is g:
        return True
    if tag == "fn":
        if isinstance(f, ConstFn) and isinstance(g, ConstFn) and f.base == g.base:
            return _leq(k.val, f.value, g.value)
        if f.dom != g.dom:
            return False
        return all(_leq(k.val, b, g.table[a]) for a, b in f.entries)
    if tag == "imap":
        gt = g.table
        return all(i in gt and _leq(k.comp(i), v, gt[i]) for i, v in f.entries)
    if f.dom != g.dom:
        return False
    return all(_leq(k.comp(i), v, g.table[i]) for i, v in f.entries)


def subseteq(k: Kind, f: Fragment, g: Fragment) -> bool:
    _check_all(k, f, g)
    return _sub(k, f, g)


def leq(k: Kind, f: Fragment, g: Fragment) -> bool:
    _check_all(k, f, g)
    return _leq(k, f, g)


# ------------------------------------------------------------------ validity


@lru_cache(maxsize=None)
def _valid(k: Kind, f: Fragment) -> bool:
    tag = k.tag
    if tag == "star":
        return True
    if tag in ("imap", "cset"):
        return all(_valid(k.comp(i), v) for i, v in f.entries)
    kk, vk = k.key, k.val
    if isinstance(f, ConstFn):
        # the domain is a full down-set and the value never changes
        return _valid(kk, f.base) and _valid(vk, f.value)
    if not all(_valid(kk, a) and _valid(vk, b) for a, b in f.entries):
        return False
    closed = all(a2 in f.table for a in f.dom for a2 in _below(kk, a))
    if _constant(f):
        # both monotonicity conditions hold trivially for a single value
        return closed
    return closed and all(_fn_pair_ok(k, f, a, b) for a in f.dom for b in f.dom)


def _constant(f: FnMap) -> bool:
    c = f.__dict__.get("_constant")
    if c is None:
        vals = [v for _, v in f.entries]
        c = all(v is vals[0] or v == vals[0] for v in vals[1:])
        object.__setattr__(f, "_constant", c)
    return c


def const_value_over(a, e):
    """The value a takes on every key <= e, if a is constant there and e is a key; else None."""
    if isinstance(a, ConstFn):
        return a.value if e in a else None
    if isinstance(a, FnMap) and e in a.table and _constant(a):
        return a.table[e]
    return None


def _fn_pair_ok(k: Kind, f: FnMap, a2, a) -> bool:
    """Monotonicity conditions between keys a2 and a of f (both in the domain)."""
    t = f.table
    if _sub(k.key, a2, a) and not _sub(k.val, t[a2], t[a]):
        return False
    if _leq(k.key, a2, a):
        return _common_lower(k.val, t[a2], t[a])
    return True


@lru_cache(maxsize=None)
def _common_lower(k: Kind, x: Fragment, y: Fragment) -> bool:
    """Is there a valid b with b included in x and b <= y?"""
    tag = k.tag
    if tag == "star":
        return True
    if tag == "fn":
        return any(_sub(k, b, x) for b in _below(k, y))
    xt, yt = x.table, y.table
    if tag == "imap":
        # b has the domain of x, inside that of y
        return all(i in yt and _common_lower(k.comp(i), v, yt[i]) for i, v in x.entries)
    return all(i in xt and _common_lower(k.comp(i), xt[i], v) for i, v in y.entries)


def is_valid(k: Kind, f: Fragment) -> bool:
    """Membership in the fragment space; raises ShapeError on a layout mismatch."""
    check_shape(k, f)
    return _valid(k, f)


# --------------------------------------------------------------- enumeration


@lru_cache(maxsize=None)
def _below(k: Kind, f: Fragment) -> tuple:
    tag = k.tag
    if tag == "star":
        return (STAR,)
    if tag == "fn":
        if isinstance(f, ConstFn) and len(_below(k.val, f.value)) == 1:
            return (f,)
        keys = f.dom
        choices = [_below(k.val, f.table[a]) for a in keys]
        out = []
        for vals in itertools.product(*choices):
            g = FnMap(tuple(zip(keys, vals)))
            if _valid(k, g):
                out.append(g)
        return tuple(out)
    if tag == "cset":
        idx = f.dom
        choices = [_below(k.comp(i), f.table[i]) for i in idx]
        return tuple(CompSet(tuple(zip(idx, vals))) for vals in itertools.product(*choices))
    out = []
    idx = f.dom
    for r in range(len(idx) + 1):
        for sub in itertools.combinations(idx, r):
            choices = [_below(k.comp(i), f.table[i]) for i in sub]
            out.extend(IndexMap(tuple(zip(sub, vals))) for vals in itertools.product(*choices))
    return tuple(out)


def enumerate_below(k: Kind, f: Fragment) -> list:
    """All valid g with g <= f, in canonical order."""
    check_shape(k, f)
    return sorted(_below(k, f), key=encode)


# ------------------------------------------------------------------ min and |


@lru_cache(maxsize=None)
def _min3(k: Kind, f, g0, g1):
    tag = k.tag
    if tag == "star":
        return STAR
    if tag == "fn":
        return FnMap(tuple((a, _min3(k.val, fa, g0.table[a], g1.table[a])) for a, fa in f.entries))
    if tag == "imap":
        t1 = g1.table
        return IndexMap(
            tuple((i, _min3(k.comp(i), f.table[i], v, t1[i])) for i, v in g0.entries if i in t1)
        )
    return CompSet(tuple((i, _min3(k.comp(i), fi, g0.table[i], g1.table[i])) for i, fi in f.entries))


def min3(k: Kind, f, g0, g1):
    _check_all(k, f, g0, g1)
    if not (_leq(k, g0, f) and _leq(k, g1, f)):
        raise PreconditionError("min3 needs g0 <= f and g1 <= f")
    return _min3(k, f, g0, g1)


@lru_cache(maxsize=None)
def _restrict(k: Kind, f, f2, fstar):
    tag = k.tag
    if tag == "star":
        return STAR
    if tag == "fn":
        return FnMap(
            tuple((a, _restrict(k.val, f.table[a], f2.table[a], v)) for a, v in fstar.entries)
        )
    if tag == "imap":
        return IndexMap(
            tuple((i, _restrict(k.comp(i), f.table[i], v, fstar.table[i])) for i, v in f2.entries)
        )
    return CompSet(
        tuple((i, _restrict(k.comp(i), f.table[i], f2.table[i], v)) for i, v in fstar.entries)
    )


def restrict(k: Kind, f, f2, fstar):
    """``f2 | fstar``: the unique g with g <= fstar and g included in f2."""
    _check_all(k, f, f2, fstar)
    if not _leq(k, f2, f):
        raise PreconditionError("restrict needs f2 <= f")
    if not _sub(k, fstar, f):
        raise PreconditionError("restrict needs fstar included in f")
    return _restrict(k, f, f2, fstar)


# ----------------------------------------------------------------- coherence


@lru_cache(maxsize=None)
def _coh2(k: Kind, f, g) -> bool:
    """Coherence of {f, g}; with f == g this is membership in the coherent space.

    Coherence of a collection is decided by its pairs: every clause of the
    recursive definition only ever relates two members at a time.
    """
    tag = k.tag
    if tag == "star":
        return True
    if tag == "imap":
        if f.dom != g.dom:
            return False
        return all(_coh2(k.comp(i), v, g.table[i]) for i, v in f.entries)
    if tag == "cset":
        ft, gt = f.table, g.table
        for i in set(ft) | set(gt):
            xs = [t[i] for t in (ft, gt) if i in t]
            if not all(_coh2(k.comp(i), x, y) for x in xs for y in xs):
                return False
        return True
    kk, vk = k.key, k.val
    if f == g and isinstance(f, ConstFn):
        return _coh2(vk, f.value, f.value) and _below_all_F(kk, f.base)
    if f is g and f.entries and _constant(f):
        return _coh2(vk, f.entries[0][1], f.entries[0][1]) and all(_coh2(kk, a, a) for a in f.dom)
    keys = sorted(set(f.dom) | set(g.dom), key=encode)
    if not all(_coh2(kk, a, a) for a in keys):
        return False
    images = {a: [t[a] for t in (f.table, g.table) if a in t] for a in keys}
    for a, b in itertools.combinations_with_replacement(keys, 2):
        if _coh2(kk, a, b):
            if not all(_coh2(vk, x, y) for x in images[a] for y in images[b]):
                return False
    return True


@lru_cache(maxsize=None)
def _below_all_F(k: Kind, f) -> bool:
    """Every g <= f is coherent."""
    tag = k.tag
    if tag == "star":
        return True
    if tag in ("imap", "cset"):
        return all(_below_all_F(k.comp(i), v) for i, v in f.entries)
    return all(_coh2(k, g, g) for g in _below(k, f))


def coherent_pair(k: Kind, f, g) -> bool:
    _check_all(k, f, g)
    return _coh2(k, f, g)


def in_F(k: Kind, f) -> bool:
    """f is a coherent fragment (its singleton is coherent)."""
    check_shape(k, f)
    return _valid(k, f) and _coh2(k, f, f)


@dataclass(frozen=True)
class CoherenceWitness:
    coherent: bool
    offending: tuple = ()

    def __bool__(self):
        return self.coherent


def is_coherent(k: Kind, S: Iterable) -> CoherenceWitness:
    items = sorted(set(S), key=encode)
    _check_all(k, *items)
    for f in items:
        if not _coh2(k, f, f):
            return CoherenceWitness(False, (f,))
    for f, g in itertools.combinations(items, 2):
        if not _coh2(k, f, g):
            return CoherenceWitness(False, (f, g))
    return CoherenceWitness(True)


def _all_coherent(k, items) -> bool:
    return all(_coh2(k, f, g) for f, g in itertools.combinations_with_replacement(items, 2))


def coherent_subsets(k: Kind, items: Iterable) -> list:
    """All non-empty coherent subsets, as tuples in canonical order."""
    items = sorted(set(items), key=encode)
    out = []

    def grow(start, current):
        for j in range(start, len(items)):
            x = items[j]
            if _coh2(k, x, x) and all(_coh2(k, x, y) for y in current):
                nxt = current + (x,)
                out.append(nxt)
                grow(j + 1, nxt)

    grow(0, ())
    return out


# --------------------------------------------------------------------- union


@lru_cache(maxsize=None)
def _union(k: Kind, S: frozenset):
    tag = k.tag
    if tag == "star":
        return STAR
    if tag == "imap":
        first = next(iter(S))
        return IndexMap(
            tuple((i, _union(k.comp(i), frozenset(f.table[i] for f in S))) for i in first.dom)
        )
    if tag == "cset":
        by_index = {}
        for f in S:
            for i, v in f.entries:
                by_index.setdefault(i, set()).add(v)
        return CompSet(tuple((i, _union(k.comp(i), frozenset(vs))) for i, vs in sorted(by_index.items())))
    kk = k.key
    keys = {a for f in S for a in f.dom}
    entries = []
    for a in keys:
        vals = frozenset(f.table[b] for f in S for b in f.dom if _sub(kk, b, a))
        entries.append((a, _union(k.val, vals)))
    return fnmap(entries)


def union_coherent(k: Kind, S: Iterable):
    S = frozenset(S)
    if not S:
        raise PreconditionError("union of an empty collection")
    w = is_coherent(k, S)
    if not w:
        raise PreconditionError(f"union of an incoherent collection (offending: {', '.join(map(encode, w.offending))})")
    return _union(k, S)


# --------------------------------------------------------------------- tilde


@lru_cache(maxsize=None)
def _tilde(k: Kind, f: FnMap) -> FnMap:
    kk = k.key
    dom = {_union(kk, frozenset(A)) for A in coherent_subsets(kk, f.dom)}
    entries = []
    for a in dom:
        vals = frozenset(v for b, v in f.entries if _sub(kk, b, a))
        entries.append((a, _union(k.val, vals)))
    return fnmap(entries)


def tilde(k: Kind, f: FnMap) -> FnMap:
    """Close the domain of f under unions of coherent subsets."""
    if k.tag != "fn":
        raise PreconditionError("tilde is defined on (A, ~psi) fragments")
    check_shape(k, f)
    if not in_F(k, f):
        raise PreconditionError("tilde needs a coherent fragment")
    return _tilde(k, f)


# -------------------------------------------------------- coherent extension


class HypothesisError(PreconditionError):
    pass


def coherent_extension(k: Kind, f, g, g2, K: Iterable = ()):
    """Some f2 <= f with g2 included in f2 and k <= f2 for each k in K.

    Needs g2 <= g, g included in f, all coherent, and for each k in K:
    k <= f and (k | g) <= g2.
    """
    K = tuple(sorted(set(K), key=encode))
    _check_all(k, f, g, g2, *K)
    for name, x in (("f", f), ("g", g), ("g2", g2)) + tuple(("K", x) for x in K):
        if not in_F(k, x):
            raise HypothesisError(f"{name} = {encode(x)} is not a coherent fragment")
    if not _leq(k, g2, g):
        raise HypothesisError("need g2 <= g")
    if not _sub(k, g, f):
        raise HypothesisError("need g included in f")
    for x in K:
        if not _leq(k, x, f):
            raise HypothesisError(f"need k <= f for k = {encode(x)}")
        if not _leq(k, _restrict(k, f, x, g), g2):
            raise HypothesisError(f"need (k | g) <= g2 for k = {encode(x)}")
    out = _extend(k, f, g, g2, K)
    if out is None:
        raise HypothesisError("no extension exists")
    return out


def _extend(k, f, g, g2, K):
    tag = k.tag
    if tag == "star":
        return STAR
    if tag == "imap":
        entries = []
        for i, v in g2.entries:
            c = _extend(k.comp(i), f.table[i], g.table[i], v, tuple(x.table[i] for x in K if i in x.table))
            if c is None:
                return None
            entries.append((i, c))
        return IndexMap(tuple(entries))
    if tag == "cset":
        entries = []
        for i, fi in f.entries:
            if i in g.table:
                c = _extend(k.comp(i), fi, g.table[i], g2.table[i], tuple(x.table[i] for x in K))
                if c is None:
                    return None
            else:
                c = fi
            entries.append((i, c))
        return CompSet(tuple(entries))
    return _extend_fn(k, f, g, g2, K)


def _extend_fn(k, f, g, g2, K):
    vk = k.val
    # first try the pointwise construction: extend inside g's keys, keep f elsewhere
    greedy = []
    for a, v in f.entries:
        if a in g2.table:
            v = _extend(vk, v, g.table[a], g2.table[a], tuple(x.table[a] for x in K))
            if v is None:
                break
        greedy.append((a, v))
    else:
        cand = FnMap(tuple(greedy))
        if _valid(k, cand) and _coh2(k, cand, cand):
            return cand
    # otherwise one key at a time, smaller keys first, backtracking on conflicts
    keys = sorted(f.dom, key=lambda a: (size(a), encode(a)))
    cands = []
    for a in keys:
        opts = [
            v
            for v in _below(vk, f.table[a])
            if (a not in g2.table or _sub(vk, g2.table[a], v)) and all(_leq(vk, x.table[a], v) for x in K)
        ]
        if not opts:
            return None
        cands.append(opts)
    fallback = None
    chosen = {}

    def ok_with(a, v):
        for b, w in chosen.items():
            trial = FnMap(tuple(sorted(((a, v), (b, w)), key=lambda kv: encode(kv[0]))))
            if not (_fn_pair_ok(k, trial, a, b) and _fn_pair_ok(k, trial, b, a)):
                return False
        return True

    def search(j):
        nonlocal fallback
        if j == len(keys):
            cand = fnmap(chosen.items())
            if _valid(k, cand):
                if _coh2(k, cand, cand):
                    return cand
                if fallback is None:
                    fallback = cand
            return None
        a = keys[j]
        for v in cands[j]:
            if ok_with(a, v) and _fn_pair_ok(k, FnMap(((a, v),)), a, a):
                chosen[a] = v
                res = search(j + 1)
                if res is not None:
                    return res
                del chosen[a]
        return None

    res = search(0)
    return fallback if res is None else res
