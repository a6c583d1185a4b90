"""Decisive pairs, bounded satisfaction, and compilation to first-order formulas."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

from .fragments import (
    STAR,
    ConstFn,
    Fragment,
    FragmentError,
    PreconditionError,
    _below,
    _coh2,
    _sub,
    _valid,
    check_shape,
    cset,
    const_fn,
    const_value_over,
    encode,
    imap,
    kind_of,
)
from .logic import (
    And,
    Atomic,
    BigAnd,
    Forall,
    Formula,
    Not,
    component,
    formula_size,
    free_vars,
    is_first_order,
)
from .structures import Structure, eval_fo


class NotDecisiveError(PreconditionError):
    pass


class BoundTooLarge(FragmentError):
    def __init__(self, size: int, cap: int):
        super().__init__(f"compiled formula exceeds the size cap ({size} > {cap})")
        self.size, self.cap = size, cap


@dataclass(frozen=True)
class DecisivePair:
    a: Fragment
    e: Fragment
    formula: Formula

    def __post_init__(self):
        if not is_decisive(self.a, self.e, self.formula):
            raise NotDecisiveError(f"({encode(self.a)}, {encode(self.e)}) is not decisive")


def _check_pair(a, e, f):
    ka, ke = kind_of("A", f), kind_of("E", f)
    check_shape(ka, a)
    check_shape(ke, e)
    for k, x, side in ((ka, a, "a"), (ke, e, "e")):
        if not (_valid(k, x) and _coh2(k, x, x)):
            raise PreconditionError(f"{side} = {encode(x)} is not a coherent fragment")


# --------------------------------------------------------------- decisiveness


def _dec(f: Formula, a, e) -> bool:
    while isinstance(f, Forall):
        f = f.body
    if isinstance(f, Atomic):
        return True
    if isinstance(f, Not):
        psi = f.body
        v = const_value_over(a, e)
        if v is not None:
            # every e' <= e is a key with value v; downward stability reduces to the top
            return _dec(psi, e, v)
        ka = kind_of("A", psi)
        keys = a.dom
        for e1 in _below(ka, e):
            if not any(_sub(ka, s, e1) and _dec(psi, e1, a[s]) for s in keys):
                return False
        return True
    et = e.table
    return all(i in et and _dec(component(f, i), ai, et[i]) for i, ai in a.entries)


def is_decisive(a: Fragment, e: Fragment, f: Formula) -> bool:
    _check_pair(a, e, f)
    return _dec(f, a, e)


def fo_decisive_pair(f: Formula) -> DecisivePair:
    """The canonical total pair of a first-order formula."""
    if not is_first_order(f):
        raise PreconditionError("fo_decisive_pair needs a first-order formula")
    a, e = _fo_pair(f)
    return DecisivePair(a, e, f)


def _fo_pair(f):
    while isinstance(f, Forall):
        f = f.body
    if isinstance(f, Atomic):
        return STAR, STAR
    if isinstance(f, Not):
        a, e = _fo_pair(f.body)
        return const_fn(kind_of("A", f), a, e), a
    pairs = [_fo_pair(p) for p in f.parts]
    return imap({i: p[0] for i, p in enumerate(pairs)}), cset({i: p[1] for i, p in enumerate(pairs)})


def neg_const(psi: Formula, base: Fragment, value: Fragment) -> ConstFn:
    """The (A, ~psi) fragment sending every g <= base to value."""
    return const_fn(kind_of("A", Not(psi)), base, value)


# --------------------------------------------------------------- evaluation


def eval_bounded(M: Structure, p, f: Optional[Formula] = None, env: Optional[Mapping] = None) -> bool:
    """Bounded satisfaction for a decisive pair ``p`` (a DecisivePair or an (a, e) tuple)."""
    if isinstance(p, DecisivePair):
        a, e, f = p.a, p.e, f or p.formula
    else:
        a, e = p
        if not is_decisive(a, e, f):
            raise NotDecisiveError("eval_bounded needs a decisive pair")
    return _Evaluator(M).run(f, a, e, dict(env or {}))


class _Evaluator:
    def __init__(self, M):
        self.M = M
        self.memo = {}

    def run(self, f, a, e, env):
        key = (f, a, e, tuple(sorted((v, env[v]) for v in free_vars(f) if v in env)))
        hit = self.memo.get(key)
        if hit is None:
            hit = self._run(f, a, e, env)
            self.memo[key] = hit
        return hit

    def _run(self, f, a, e, env):
        if isinstance(f, Atomic):
            return eval_fo(self.M, f, env)
        if isinstance(f, Forall):
            for u in range(self.M.size):
                if not self.run(f.body, a, e, {**env, f.var: u}):
                    return False
            return True
        if isinstance(f, (BigAnd, And)):
            et = e.table
            return all(self.run(component(f, i), ai, et[i], env) for i, ai in a.entries)
        psi = f.body
        v = const_value_over(a, e)
        if v is not None:
            return self._neg_const(psi, v, e, env)
        ka = kind_of("A", psi)
        keys = a.dom
        for e1 in _below(ka, e):
            for s in keys:
                if _sub(ka, s, e1) and _dec(psi, e1, a[s]) and not self.run(psi, e1, a[s], env):
                    return True
        return False

    def _neg_const(self, psi, v, e, env):
        # a constant map over the whole down-set of e: the witness e' may be
        # taken to have a single component when psi is a conjunction
        core = psi
        while isinstance(core, Forall):
            core = core.body
        ka = kind_of("A", psi)
        if not isinstance(core, (BigAnd, And)):
            return any(_dec(psi, e1, v) and not self.run(psi, e1, v, env) for e1 in _below(ka, e))
        for i, ei in e.entries:
            ki = ka.comp(i)
            for x in _below(ki, ei):
                e1 = imap({i: x})
                if _dec(psi, e1, v) and not self.run(psi, e1, v, env):
                    return True
        return False


# --------------------------------------------------------------- compilation


def compile_fo(p, f: Optional[Formula] = None, cap: Optional[int] = None) -> Formula:
    """A first-order formula equivalent to bounded satisfaction under ``p``."""
    if isinstance(p, DecisivePair):
        a, e, f = p.a, p.e, f or p.formula
    else:
        a, e = p
        if not is_decisive(a, e, f):
            raise NotDecisiveError("compile_fo needs a decisive pair")
    return _Compiler(cap).run(f, a, e)


def choose_key(psi: Formula, a, e1):
    """The inclusion-greatest key s of a with s included in e1 and (e1, a(s)) decisive."""
    ka = kind_of("A", psi)
    if const_value_over(a, e1) is not None:
        return e1
    cands = [s for s in a.dom if _sub(ka, s, e1) and _dec(psi, e1, a[s])]
    if not cands:
        raise NotDecisiveError("no decisive key")
    top = [s for s in cands if not any(t != s and _sub(ka, s, t) for t in cands)]
    return min(top, key=encode)


def _flat_conj(parts):
    # one n-ary node; nested binary conjunctions would be as deep as they are long
    return parts[0] if len(parts) == 1 else And(tuple(parts))


class _Compiler:
    def __init__(self, cap):
        self.cap = cap
        self.memo = {}

    def run(self, f, a, e):
        key = (f, a, e)
        out = self.memo.get(key)
        if out is None:
            out = self._run(f, a, e)
            if self.cap is not None:
                n = formula_size(out)
                if n > self.cap:
                    raise BoundTooLarge(n, self.cap)
            self.memo[key] = out
        return out

    def _run(self, f, a, e):
        if isinstance(f, Atomic):
            return f
        if isinstance(f, Forall):
            return Forall(f.var, self.run(f.body, a, e))
        if isinstance(f, (BigAnd, And)):
            et = e.table
            return _flat_conj([self.run(component(f, i), ai, et[i]) for i, ai in a.entries])
        psi = f.body
        ka = kind_of("A", psi)
        parts = []
        for e1 in sorted(_below(ka, e), key=encode):
            parts.append(self.run(psi, e1, a[choose_key(psi, a, e1)]))
            if self.cap is not None and len(parts) > self.cap:
                raise BoundTooLarge(len(parts), self.cap)
        # a disjunction of negations, written as the negated conjunction
        return Not(_flat_conj(parts))
