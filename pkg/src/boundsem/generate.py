"""Fragment generators for property tests and experiments.

Exhaustive enumeration is bounded by structural depth and two caps: indices
of infinite conjunctions are taken below ``idx_cap``, and a function
fragment's domain is the down-closure of at most ``key_cap`` generating keys.
"""
from __future__ import annotations

import itertools
import random
from functools import lru_cache

from .fragments import (
    STAR,
    CompSet,
    FnMap,
    Fragment,
    IndexMap,
    Kind,
    _below,
    _coh2,
    _fn_pair_ok,
    _leq,
    _sub,
    _valid,
    encode,
    kind_of,
)
from fractions import Fraction

from .logic import And, App, Atomic, BigAnd, Const, Forall, INat, Not, Var, conj, parse_formula
from .structures import DistanceRule, SequenceRule, Structure

BENCHMARKS = {
    "fo": "forall x. ~(U_0(x) /\\ ~U_1(S(x)))",
    "pi2": "/\\{n in N} \\/{m in N} D_n(c_m, c_{m+1})",
    "pi3": "/\\{n in N} \\/{m in N} /\\{k in N} D_n(c_m, c_{max(m,k)})",
}


def benchmark(name: str):
    return parse_formula(BENCHMARKS[name])


def _indices(k: Kind, idx_cap: int):
    node = k.node
    if isinstance(node, And):
        return list(range(min(len(node.parts), idx_cap)))
    assert isinstance(node, BigAnd)
    return [i for i in range(idx_cap) if k.admits(i)]


def reachable_kinds(k: Kind, idx_cap: int = 2) -> list:
    """k and every kind below it, following components below idx_cap."""
    seen, todo = [], [k]
    while todo:
        x = todo.pop()
        if x in seen:
            continue
        seen.append(x)
        tag = x.tag
        if tag == "fn":
            todo += [x.key, x.val]
        elif tag in ("imap", "cset"):
            todo += [x.comp(i) for i in _indices(x, idx_cap)]
    return seen


def formula_kinds(f, idx_cap: int = 2) -> list:
    out = []
    for role in ("A", "E"):
        for x in reachable_kinds(kind_of(role, f), idx_cap):
            if x not in out:
                out.append(x)
    return out


# ------------------------------------------------------------- exhaustive


@lru_cache(maxsize=None)
def candidates(k: Kind, depth: int, idx_cap: int = 2, key_cap: int = 2) -> tuple:
    """Every shape-correct fragment of depth <= depth within the caps, valid or not."""
    tag = k.tag
    if tag == "star":
        return (STAR,)
    if depth < 1:
        return ()
    out = []
    if tag in ("imap", "cset"):
        cls = IndexMap if tag == "imap" else CompSet
        idx = _indices(k, idx_cap)
        for r in range(len(idx) + 1):
            for sub in itertools.combinations(idx, r):
                pools = [candidates(k.comp(i), depth - 1, idx_cap, key_cap) for i in sub]
                out += [cls(tuple(zip(sub, vals))) for vals in itertools.product(*pools)]
        return tuple(out)
    keys = [a for a in candidates(k.key, depth - 1, idx_cap, key_cap) if _valid(k.key, a)]
    vals = candidates(k.val, depth - 1, idx_cap, key_cap)
    doms = set()
    for r in range(key_cap + 1):
        for gens in itertools.combinations(keys, r):
            doms.add(frozenset(x for a in gens for x in _below(k.key, a)))
    for dom in sorted(doms, key=lambda d: sorted(map(encode, d))):
        ds = sorted(dom, key=encode)
        out += [FnMap(tuple(zip(ds, vs))) for vs in itertools.product(vals, repeat=len(ds))]
    return tuple(out)


def valid_pool(k: Kind, depth: int = 2, idx_cap: int = 2, key_cap: int = 2) -> list:
    return [f for f in candidates(k, depth, idx_cap, key_cap) if _valid(k, f)]


def coherent_pool(k: Kind, depth: int = 2, idx_cap: int = 2, key_cap: int = 2) -> list:
    return [f for f in valid_pool(k, depth, idx_cap, key_cap) if _coh2(k, f, f)]


@lru_cache(maxsize=None)
def subsets_of(k: Kind, f: Fragment) -> tuple:
    """Every valid g included in f."""
    tag = k.tag
    if tag == "star":
        return (STAR,)
    if tag == "imap":
        pools = [subsets_of(k.comp(i), v) for i, v in f.entries]
        return tuple(IndexMap(tuple(zip(f.dom, vs))) for vs in itertools.product(*pools))
    if tag == "cset":
        out = []
        idx = f.dom
        for r in range(len(idx) + 1):
            for sub in itertools.combinations(idx, r):
                pools = [subsets_of(k.comp(i), f.table[i]) for i in sub]
                out += [CompSet(tuple(zip(sub, vs))) for vs in itertools.product(*pools)]
        return tuple(out)
    out = []
    dom = f.dom
    for r in range(len(dom) + 1):
        for sub in itertools.combinations(dom, r):
            pools = [subsets_of(k.val, f.table[a]) for a in sub]
            for vs in itertools.product(*pools):
                g = FnMap(tuple(zip(sub, vs)))
                if _valid(k, g):
                    out.append(g)
    return tuple(out)


# ------------------------------------------------------------------ random


def random_fragment(k: Kind, rng: random.Random, depth: int = 4, idx_cap: int = 3, max_keys: int = 8) -> Fragment:
    """A random valid fragment; function fragments start constant on a down-set, then get perturbed."""
    tag = k.tag
    if tag == "star":
        return STAR
    if depth < 1:
        return (IndexMap if tag == "imap" else CompSet if tag == "cset" else FnMap)(())
    if tag in ("imap", "cset"):
        cls = IndexMap if tag == "imap" else CompSet
        idx = [i for i in _indices(k, idx_cap) if rng.random() < 0.7]
        return cls(tuple((i, random_fragment(k.comp(i), rng, depth - 1, idx_cap, max_keys)) for i in idx))
    if rng.random() < 0.1:
        return FnMap(())
    # keys from two unrelated down-sets can be coherent without being nested
    tops = [random_fragment(k.key, rng, depth - 1, idx_cap, max_keys)]
    if rng.random() < 0.5:
        tops.append(_sibling(k.key, tops[0], rng, depth - 1, idx_cap, max_keys))
    dom = {a for t in tops for a in _below(k.key, t)}
    if len(dom) > max_keys:
        return FnMap(())
    v = random_fragment(k.val, rng, depth - 1, idx_cap, max_keys)
    dom = sorted(dom, key=encode)
    f = FnMap(tuple((a, v) for a in dom))
    for _ in range(2 * len(dom)):
        a = rng.choice(dom)
        if rng.random() < 0.5:
            # an unrelated value; this is what makes some fragments incoherent
            w = random_fragment(k.val, rng, depth - 1, idx_cap, max_keys)
        else:
            w = random_subset(k.val, f.table[a], rng)
        trial = FnMap(tuple((b, w if b == a else x) for b, x in f.entries))
        if _edit_ok(k, trial, a):
            f = trial
    return f


def _edit_ok(k, f, a):
    """Validity of f after changing only the value at a (domain untouched)."""
    return _valid(k.val, f.table[a]) and all(_fn_pair_ok(k, f, a, b) and _fn_pair_ok(k, f, b, a) for b in f.dom)


def _sibling(k, t, rng, depth, idx_cap, max_keys):
    """A random fragment with the same index domain as t, so that the two may cohere."""
    if k.tag != "imap":
        return random_fragment(k, rng, depth, idx_cap, max_keys)
    return IndexMap(tuple((i, random_fragment(k.comp(i), rng, depth - 1, idx_cap, max_keys)) for i in t.dom))


def random_coherent(k: Kind, rng: random.Random, tries: int = 50, **kw) -> Fragment:
    """A random coherent fragment (falls back to a ⊆-smaller piece of a random one)."""
    for _ in range(tries):
        f = random_fragment(k, rng, **kw)
        if _coh2(k, f, f):
            return f
        for _ in range(tries):
            g = random_subset(k, f, rng)
            if _coh2(k, g, g):
                return g
    raise RuntimeError("no coherent fragment found")


def coherent_family(k: Kind, parent: Fragment, rng: random.Random, n: int = 3) -> tuple:
    """Members included in a common coherent parent, hence coherent together."""
    return tuple(sorted({random_subset(k, parent, rng) for _ in range(n)}, key=encode))


def random_below(k: Kind, f: Fragment, rng: random.Random) -> Fragment:
    """A random valid g <= f, sampled without listing the down-set."""
    tag = k.tag
    if tag == "star":
        return STAR
    if tag == "imap":
        return IndexMap(tuple((i, random_below(k.comp(i), v, rng)) for i, v in f.entries if rng.random() < 0.7))
    if tag == "cset":
        return CompSet(tuple((i, random_below(k.comp(i), v, rng)) for i, v in f.entries))
    g = f
    for _ in range(2 * len(f.dom)):
        a = rng.choice(f.dom)
        w = random_below(k.val, g.table[a], rng)
        trial = FnMap(tuple((b, w if b == a else x) for b, x in g.entries))
        if _edit_ok(k, trial, a):
            g = trial
    return g


def random_subset(k: Kind, f: Fragment, rng: random.Random, keep: float = 0.6) -> Fragment:
    """A random valid g included in f, sampled without listing them all.

    ``keep`` is the chance that an index or a domain generator survives.
    """
    tag = k.tag
    if tag == "star":
        return STAR
    if tag == "imap":
        return IndexMap(tuple((i, random_subset(k.comp(i), v, rng, keep)) for i, v in f.entries))
    if tag == "cset":
        return CompSet(tuple((i, random_subset(k.comp(i), v, rng, keep)) for i, v in f.entries if rng.random() < keep))
    # restricting to a down-closed domain keeps f valid; then shrink values one at a time
    tops = [a for a in f.dom if rng.random() < keep]
    dom = sorted({x for a in tops for x in _below(k.key, a)}, key=encode)
    g = FnMap(tuple((a, f.table[a]) for a in dom))
    for _ in range(len(dom)):
        if rng.random() < keep:
            continue
        a = rng.choice(dom)
        w = random_subset(k.val, g.table[a], rng, keep)
        trial = FnMap(tuple((b, w if b == a else x) for b, x in g.entries))
        if _edit_ok(k, trial, a):
            g = trial
    return g


def leq_pairs(k: Kind, pool) -> list:
    return [(f, g) for f in pool for g in pool if _leq(k, f, g)]


def sub_pairs(k: Kind, pool) -> list:
    return [(f, g) for f in pool for g in pool if _sub(k, f, g)]


# -------------------------------------------------------------- structures

_DISTANCES = (Fraction(0), Fraction(1, 3), Fraction(1, 2), Fraction(1))


def random_structure(rng: random.Random, size: int, colors: int = 3, seq_len: int = 6) -> Structure:
    """Random interpretation of the default signature: U_i tables, S, a pseudo-metric and a sequence c."""
    n = range(size)
    preds = {("U", i): frozenset((x,) for x in n if rng.random() < 0.5) for i in range(colors)}
    matrix = [[Fraction(0)] * size for _ in n]
    for x in n:
        for y in range(x + 1, size):
            matrix[x][y] = matrix[y][x] = rng.choice(_DISTANCES)
    seq = SequenceRule(
        tuple(rng.randrange(size) for _ in range(rng.randrange(seq_len))),
        tuple(rng.randrange(size) for _ in range(rng.randint(1, 3))),
    )
    return Structure(
        size=size,
        label=f"random{size}",
        pred_tables=preds,
        pred_rules={"D": DistanceRule(tuple(map(tuple, matrix)))},
        fn_tables={("S", None): {(x,): rng.randrange(size) for x in n}},
        const_rules={"c": seq},
    )


def random_fo_formula(rng: random.Random, depth: int = 3, variables=("x",), colors: int = 2):
    """A random first-order formula over U_i, S and c_k."""

    def term():
        if rng.random() < 0.2:
            return Const("c", INat(rng.randrange(3)))
        t = Var(rng.choice(variables))
        for _ in range(rng.choice((0, 0, 1, 2))):
            t = App("S", (t,))
        return t

    def go(d):
        r = rng.random()
        if d == 0 or r < 0.25:
            return Atomic("U", (term(),), INat(rng.randrange(colors)))
        if r < 0.5:
            return Not(go(d - 1))
        if r < 0.8:
            return conj([go(d - 1), go(d - 1)])
        return Forall(rng.choice(variables), go(d - 1))

    return go(depth)
