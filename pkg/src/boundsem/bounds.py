"""Concrete bounds for prenex classes up to Pi_3, and the family checkers."""
from __future__ import annotations

import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

from .bounded import DecisivePair, _fo_pair, eval_bounded, neg_const
from .fragments import PreconditionError, cset, imap
from .logic import (
    BigAnd,
    Formula,
    Not,
    PrenexClass,
    FO,
    PiN,
    SigmaN,
    classify,
    component,
    is_first_order,
    strip_foralls,
    to_text,
)
from .structures import FamilySpec, StructureError

THREADS_ENV = "BOUNDSEM_THREADS"
MAX_WINDOW = 100_000


class BoundError(ValueError):
    pass


class CheckError(RuntimeError):
    pass


# ------------------------------------------------------------ monotone maps


@dataclass(frozen=True)
class MonotoneFn:
    """Step function given by breakpoints; ``shift`` adds the identity, m -> m + step(m)."""

    breakpoints: tuple
    shift: bool = False

    def __post_init__(self):
        bp = self.breakpoints
        if not bp or bp[0][0] != 0:
            raise BoundError("the first breakpoint must be at 0")
        for (t0, v0), (t1, v1) in zip(bp, bp[1:]):
            if t1 <= t0:
                raise BoundError("breakpoint thresholds must increase strictly")
            if v1 < v0:
                raise BoundError("breakpoint values must not decrease")
        if any(t < 0 or v < 0 for t, v in bp):
            raise BoundError("breakpoints are natural numbers")

    def step(self, m: int) -> int:
        out = self.breakpoints[0][1]
        for t, v in self.breakpoints:
            if t > m:
                break
            out = v
        return out

    def __call__(self, m: int) -> int:
        return m + self.step(m) if self.shift else self.step(m)

    def __str__(self):
        body = ",".join(f"{t}->{v}" for t, v in self.breakpoints)
        return ("m+" if self.shift else "") + "mono:" + body

    @classmethod
    def parse(cls, text: str) -> "MonotoneFn":
        text = text.strip()
        shift = text.startswith("m+")
        if shift:
            text = text[2:]
        if not text.startswith("mono:"):
            raise BoundError(f"expected 'mono:t0->v0,...', got {text!r}")
        pts = []
        for item in text[5:].split(","):
            m = re.fullmatch(r"\s*(\d+)\s*->\s*(\d+)\s*", item)
            if not m:
                raise BoundError(f"bad breakpoint {item!r}")
            pts.append((int(m.group(1)), int(m.group(2))))
        return cls(tuple(pts), shift)

    @classmethod
    def from_values(cls, values: Sequence[int], shift: bool = False) -> "MonotoneFn":
        """The step function taking ``values`` on 0..len-1 and constant afterwards."""
        pts = []
        for t, v in enumerate(values):
            if not pts or pts[-1][1] != v:
                pts.append((t, v))
        return cls(tuple(pts), shift)

    @classmethod
    def pointwise_max(cls, fns: Sequence["MonotoneFn"]) -> "MonotoneFn":
        if len({f.shift for f in fns}) != 1:
            raise BoundError("cannot combine shifted and unshifted functions")
        ts = sorted({t for f in fns for t, _ in f.breakpoints})
        return cls.from_values_at(ts, [max(f.step(t) for f in fns) for t in ts], fns[0].shift)

    @classmethod
    def from_values_at(cls, ts, vs, shift=False):
        pts = []
        for t, v in zip(ts, vs):
            if not pts or pts[-1][1] != v:
                pts.append((t, v))
        return cls(tuple(pts), shift)


# -------------------------------------------------------------------- bounds


@dataclass(frozen=True)
class BStar:
    def __str__(self):
        return "star"


@dataclass(frozen=True)
class BNat:
    n: int

    def __post_init__(self):
        if self.n < 0:
            raise BoundError("bounds are natural numbers")

    def __str__(self):
        return f"nat:{self.n}"


@dataclass(frozen=True)
class BMono:
    F: MonotoneFn

    def __str__(self):
        return str(self.F)


@dataclass(frozen=True)
class BPair:
    """``(N, F)``; F may be one function or one per n in [0, N]."""

    n: int
    F: Union[MonotoneFn, tuple]

    def __post_init__(self):
        if self.n < 0:
            raise BoundError("bounds are natural numbers")
        if isinstance(self.F, tuple) and len(self.F) != self.n + 1:
            raise BoundError(f"need {self.n + 1} functions, one per n in [0,{self.n}]")

    def at(self, n: int) -> MonotoneFn:
        return self.F[n] if isinstance(self.F, tuple) else self.F

    def normalized(self) -> "BPair":
        if isinstance(self.F, tuple):
            return BPair(self.n, MonotoneFn.pointwise_max(self.F))
        return self

    def __str__(self):
        fs = "|".join(map(str, self.F)) if isinstance(self.F, tuple) else str(self.F)
        return f"pair:{self.n};{fs}"


Bound = Union[BStar, BNat, BMono, BPair]


def parse_bound(text: str) -> Bound:
    text = text.strip()
    if text == "star":
        return BStar()
    if text.startswith("nat:"):
        try:
            return BNat(int(text[4:]))
        except ValueError:
            raise BoundError(f"bad natural bound {text!r}") from None
    if text.startswith("pair:"):
        head, sep, rest = text[5:].partition(";")
        if not sep:
            raise BoundError("expected 'pair:<n>;<mono>'")
        fs = tuple(MonotoneFn.parse(p) for p in rest.split("|"))
        return BPair(int(head), fs[0] if len(fs) == 1 else fs)
    if text.startswith(("mono:", "m+mono:")):
        return BMono(MonotoneFn.parse(text))
    raise BoundError(f"unknown bound {text!r}")


# ------------------------------------------------------------ fragment_of

_PAIRING = {
    FO: (BStar, BStar),
    PiN(1): (BNat, BStar),
    SigmaN(1): (BStar, BNat),
    PiN(2): (BNat, BNat),
    SigmaN(2): (BMono, BNat),
    PiN(3): (BPair, BNat),
}


def _window(ks):
    ks = list(ks)
    if len(ks) > MAX_WINDOW:
        raise BoundError(f"bound window of {len(ks)} indices exceeds the cap {MAX_WINDOW}")
    return ks


def _conj_node(f: Formula) -> BigAnd:
    f = strip_foralls(f)
    if not isinstance(f, BigAnd):
        raise BoundError(f"expected a countable conjunction, found {to_text(f)}")
    return f


def _neg_conj(f: Formula) -> BigAnd:
    f = strip_foralls(f)
    if not isinstance(f, Not):
        raise BoundError(f"expected a countable disjunction, found {to_text(f)}")
    return _conj_node(f.body)


def _pi1(f, ks):
    node = _conj_node(f)
    pairs = {k: _fo(component(node, k)) for k in _window(ks)}
    return imap({k: p[0] for k, p in pairs.items()}), cset({k: p[1] for k, p in pairs.items()})


def _fo(f):
    if not is_first_order(f):
        raise BoundError(f"expected a first-order kernel, found {to_text(f)}")
    return _fo_pair(f)


def _sigma1(f, ks):
    """``~/\\_k chi_k`` with the disjunction cut to the indices ``ks``."""
    node = _neg_conj(f)
    e_inner, a_inner = _pi1(node, ks)
    return neg_const(node, e_inner, a_inner), e_inner


def _sigma2(f, E, window):
    node = _neg_conj(f)
    parts = {m: _sigma1(component(node, m), window(m)) for m in range(E + 1)}
    e = imap({m: p[0] for m, p in parts.items()})
    value = cset({m: p[1] for m, p in parts.items()})
    return neg_const(node, e, value), e


def _pi_over(f, N, build):
    node = _conj_node(f)
    parts = {n: build(component(node, n), n) for n in range(N + 1)}
    return imap({n: p[0] for n, p in parts.items()}), cset({n: p[1] for n, p in parts.items()})


def fragment_of(A: Bound, E: Bound, f: Formula) -> DecisivePair:
    """A decisive pair representing the bounds (A, E) for a prenex sentence."""
    cls = classify(f)
    if cls not in _PAIRING:
        raise BoundError(f"no concrete bounds for class {cls}")
    ta, te = _PAIRING[cls]
    if not (isinstance(A, ta) and isinstance(E, te)):
        raise BoundError(f"class {cls} takes ({ta.__name__}, {te.__name__}) bounds, got ({A}, {E})")
    if cls == FO:
        a, e = _fo(f)
    elif cls == PiN(1):
        a, e = _pi1(f, range(A.n + 1))
    elif cls == SigmaN(1):
        a, e = _sigma1(f, range(E.n + 1))
    elif cls == PiN(2):
        a, e = _pi_over(f, A.n, lambda g, n: _sigma1(g, range(E.n + 1)))
    elif cls == SigmaN(2):
        a, e = _sigma2(f, E.n, lambda m: range(A.F(m) + 1))
    else:
        a, e = _pi_over(f, A.n, lambda g, n: _sigma2(g, E.n, lambda m, F=A.at(n): (F(m),)))
    return DecisivePair(a, e, f)


def enumerate_exists_bounds(cls: PrenexClass, cap: int) -> list:
    if cls not in _PAIRING:
        raise BoundError(f"the existential side of {cls} is not enumerable here")
    if _PAIRING[cls][1] is BStar:
        return [BStar()]
    return [BNat(k) for k in range(cap + 1)]


# ------------------------------------------------------------------ reports


@dataclass(frozen=True)
class CheckReport:
    formula: str
    bound: str
    label: str  # name of the searched witness: 'E' or 'm'
    candidates: tuple  # ((k, frozenset of satisfying indices), ...)
    winner: Optional[int]
    prefix_len: int
    tail_start: int
    timings: tuple = field(default=(), compare=False)

    @property
    def verdict(self) -> bool:
        return self.winner is not None

    @property
    def tail(self) -> frozenset:
        return frozenset(range(self.tail_start, self.prefix_len))

    def sat(self, k: int) -> frozenset:
        return dict(self.candidates)[k]

    def is_monotone(self) -> bool:
        wins = [self.tail <= s for _, s in self.candidates]
        return all(not w or all(wins[j:]) for j, w in enumerate(wins))

    def machine_lines(self) -> list:
        out = [f"{self.label}={k} sat={{{','.join(map(str, sorted(s)))}}}" for k, s in self.candidates]
        out.append(f"winner={'none' if self.winner is None else f'{self.label}={self.winner}'}")
        out.append(f"prefix={self.prefix_len} tail-start={self.tail_start}")
        return out

    def table(self) -> str:
        lines = [
            f"formula: {self.formula}",
            f"bound:   {self.bound}",
            f"prefix:  {self.prefix_len} structures, tail from index {self.tail_start}",
            f"{self.label:>4}  tail?  satisfied indices",
        ]
        for k, s in self.candidates:
            mark = "yes" if self.tail <= s else "no"
            lines.append(f"{k:>4}  {mark:<5}  {_ranges(sorted(s))}")
        if self.winner is None:
            lines.append(f"verdict: false (no {self.label} up to {self.candidates[-1][0] if self.candidates else '-'} covers the tail)")
        else:
            lines.append(f"verdict: true ({self.label}={self.winner})")
        return "\n".join(lines)


def _ranges(xs):
    if not xs:
        return "{}"
    out, start, prev = [], xs[0], xs[0]
    for x in xs[1:] + [None]:
        if x is not None and x == prev + 1:
            prev = x
            continue
        out.append(str(start) if start == prev else f"{start}-{prev}")
        if x is not None:
            start = prev = x
    return "{" + ",".join(out) + "}"


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _map_structures(fn, fam: FamilySpec):
    def timed(i):
        t0 = time.perf_counter()
        try:
            out = fn(fam.structures[i])
        except (StructureError, PreconditionError) as exc:
            raise CheckError(f"{fam.structures[i].label or f'structure {i}'}: {exc}") from exc
        return out, time.perf_counter() - t0

    idx = range(len(fam))
    n = _threads()
    if n == 1:
        results = [timed(i) for i in idx]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(timed, idx))
    return [r for r, _ in results], tuple(t for _, t in results)


def _winner(cands, tail):
    return next((k for k, s in cands if tail <= s), None)


def check_family(fam: FamilySpec, f: Formula, A: Bound, capE: int) -> CheckReport:
    """For the supplied A, the satisfaction set of every E candidate up to capE."""
    if capE < 0:
        raise BoundError("capE must be a natural number")
    cls = classify(f)
    cands_E = enumerate_exists_bounds(cls, capE)
    pairs = [(E, fragment_of(A, E, f)) for E in cands_E]

    def per_structure(M):
        return [eval_bounded(M, p) for _, p in pairs]

    rows, timings = _map_structures(per_structure, fam)
    cands = tuple(
        (getattr(E, "n", 0), frozenset(i for i, row in enumerate(rows) if row[j])) for j, (E, _) in enumerate(pairs)
    )
    return CheckReport(to_text(f), str(A), "E", cands, _winner(cands, fam.tail), len(fam), fam.tail_start, timings)


def check_metastable(fam: FamilySpec, epsilon, F: MonotoneFn, capM: int) -> CheckReport:
    """Search m <= capM with d_i(c_m, c_max(m,F(m))) < epsilon on the whole tail, from the distance data."""
    epsilon = Fraction(epsilon)
    if not 0 < epsilon <= 1:
        raise BoundError("epsilon must lie in (0, 1]")
    if capM < 0:
        raise BoundError("capM must be a natural number")

    def per_structure(M):
        metric, seq = M.metric, M.const_rules.get("c")
        if metric is None or seq is None:
            raise StructureError("not a sequence space (needs a distance rule and a sequence c)")
        return [metric.distance(seq.value(m), seq.value(max(m, F(m)))) < epsilon for m in range(capM + 1)]

    rows, timings = _map_structures(per_structure, fam)
    cands = tuple((m, frozenset(i for i, row in enumerate(rows) if row[m])) for m in range(capM + 1))
    desc = "d(c_m, c_max(m,F(m))) < eps"
    return CheckReport(desc, f"eps={epsilon} F={F}", "m", cands, _winner(cands, fam.tail), len(fam), fam.tail_start, timings)


def epsilon_level(epsilon) -> int:
    """The n with 1/n = epsilon, so that D_n expresses distance < epsilon."""
    epsilon = Fraction(epsilon)
    if epsilon <= 0 or epsilon.numerator != 1:
        raise BoundError("epsilon must have the form 1/n")
    return epsilon.denominator
