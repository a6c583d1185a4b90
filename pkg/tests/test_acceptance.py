"""Acceptance criteria, one test each; the terminal summary prints a pass/fail line per criterion."""
import itertools
import random
import time
from collections import Counter
from fractions import Fraction

from hypothesis import given, settings, strategies as st

import oracles
from boundsem.bounded import compile_fo, eval_bounded, fo_decisive_pair, is_decisive
from boundsem.bounds import BMono, BNat, BPair, BStar, MonotoneFn, check_family, check_metastable, epsilon_level, fragment_of
from boundsem.fragments import (
    STAR,
    coherent_extension,
    encode,
    enumerate_below,
    imap,
    in_F,
    is_coherent,
    is_valid,
    kind_of,
    leq,
    min3,
    restrict,
    subseteq,
    tilde,
    union_coherent,
)
from boundsem.generate import (
    benchmark,
    candidates,
    coherent_family,
    formula_kinds,
    random_below,
    random_coherent,
    random_fragment,
    random_structure,
    random_subset,
    valid_pool,
)
from boundsem.logic import free_vars, is_first_order, parse_formula
from boundsem.structures import eval_fo, gen_sequence_space, sequence_family
from criteria import criterion
from pairs import SENTENCES, TEMPLATES, direct, instances, parent_pool, random_mono, shrunk_pair, template_pair
from pairs import agreement_instance, upward_instance

BENCH = ("fo", "pi2", "pi3")
CONVERGENCE = parse_formula("/\\{n in N} \\/{m in N} /\\{k in N} D_n(c_m, c_{max(m,k)})")
DOUBLE = kind_of("A", parse_formula("~~ /\\{k in N} U_k(c_0)"))
CLASH = kind_of("A", parse_formula("~ /\\{i in N} ~ /\\{k in N} U_k(c_i)"))


def kinds_of(names, extra=()):
    """Distinct non-atomic kinds reachable from the named benchmarks."""
    out = []
    for k in [k for n in names for k in formula_kinds(benchmark(n))] + list(extra):
        if k.tag != "star" and k not in out:
            out.append(k)
    return out


def envs(M, f):
    names = sorted(free_vars(f))
    for vals in itertools.product(range(M.size), repeat=len(names)):
        yield dict(zip(names, vals))


# ------------------------------------------------------------ 1: algebra


def _exhaustive_laws(k, bad, seen):
    P = valid_pool(k, 2)
    S = {f: {g for g in P if subseteq(k, f, g)} for f in P}  # f -> its supersets
    L = {f: {g for g in P if leq(k, f, g)} for f in P}  # f -> everything above it
    subs = {f: {g for g in P if f in S[g]} for f in P}
    below = {f: {g for g in P if f in L[g]} for f in P}
    F = {f for f in P if in_F(k, f)}
    for f in P:
        seen["fragments"] += 1
        bad["sub reflexive"] += f not in S[f]
        bad["leq reflexive"] += f not in L[f]
        bad["sub transitive"] += sum(h not in S[f] for g in S[f] for h in S[g])
        bad["leq transitive"] += sum(h not in L[f] for g in L[f] for h in L[g])
        bad["leq antisymmetric"] += sum(g != f for g in L[f] if f in L[g])
        if f in F:
            bad["F downward closed"] += sum(g not in F for g in subs[f])
        B = below[f]
        for g0, g1 in itertools.product(B, repeat=2):
            seen["min3"] += 1
            m = min3(k, f, g0, g1)
            bad["min (1) valid"] += not is_valid(k, m)
            bad["min (2) <= g0"] += not leq(k, m, g0)
            bad["min (3) <= g1"] += not leq(k, m, g1)
            lower = below[g0] & below[g1]
            bad["min (4) greatest"] += sum(not leq(k, h, m) for h in lower)
            bad["min3 is glb"] += m not in lower
            for f2 in subs[f]:
                for h0, h1 in itertools.product(below[f2], repeat=2):
                    if h0 in subs[g0] and h1 in subs[g1]:
                        bad["min (5) sub-monotone"] += not subseteq(k, min3(k, f2, h0, h1), m)
            for f2 in B:
                for h0, h1 in itertools.product(below[f2], repeat=2):
                    if h0 in below[g0] and h1 in below[g1]:
                        bad["min (6) leq-monotone"] += not leq(k, min3(k, f2, h0, h1), m)
        for f2, fs in itertools.product(B, subs[f]):
            seen["restrict"] += 1
            r = restrict(k, f, f2, fs)
            bad["restrict (1) valid"] += not is_valid(k, r)
            bad["restrict (2) <= f*"] += not leq(k, r, fs)
            bad["restrict (3) sub f'"] += not subseteq(k, r, f2)
            bad["restrict (4) unique"] += below[fs] & subs[f2] != {r}
            for g in subs[f]:
                for g2 in below[g]:
                    if g2 in subs[f2]:
                        for gs in subs[g]:
                            if gs in subs[fs]:
                                bad["restrict (5) sub-monotone"] += not subseteq(k, restrict(k, g, g2, gs), r)
            for g in B:
                for g2 in below[g]:
                    if g2 in below[f2]:
                        for gs in subs[g]:
                            if gs in below[fs]:
                                bad["restrict (6) leq-monotone"] += not leq(k, restrict(k, g, g2, gs), r)


def _random_laws(k, f, rng, bad):
    g, s = random_below(k, f, rng), random_subset(k, f, rng)
    g2, s2 = random_below(k, g, rng), random_subset(k, s, rng)
    bad["sub reflexive"] += not subseteq(k, f, f)
    bad["leq reflexive"] += not leq(k, f, f)
    bad["sub transitive"] += not (subseteq(k, s, f) and subseteq(k, s2, s) and subseteq(k, s2, f))
    bad["leq transitive"] += not (leq(k, g, f) and leq(k, g2, g) and leq(k, g2, f))
    bad["leq antisymmetric"] += leq(k, f, g) and f != g
    if in_F(k, f):
        bad["F downward closed"] += not (in_F(k, s) and in_F(k, s2))

    g0, g1 = random_below(k, f, rng), random_below(k, f, rng)
    m = min3(k, f, g0, g1)
    bad["min (1) valid"] += not is_valid(k, m)
    bad["min (2) <= g0"] += not leq(k, m, g0)
    bad["min (3) <= g1"] += not leq(k, m, g1)
    for h in (random_below(k, g0, rng), random_below(k, g1, rng), random_below(k, m, rng)):
        if leq(k, h, g0) and leq(k, h, g1):
            bad["min (4) greatest"] += not leq(k, h, m)
    f2 = random_subset(k, f, rng)
    h0, h1 = restrict(k, f, g0, f2), restrict(k, f, g1, f2)
    bad["min (5) sub-monotone"] += not subseteq(k, min3(k, f2, h0, h1), m)
    f2 = random_below(k, f, rng)
    h0, h1 = min3(k, f, g0, f2), min3(k, f, g1, f2)
    bad["min (6) leq-monotone"] += not leq(k, min3(k, f2, h0, h1), m)

    f2, fs = random_below(k, f, rng), random_subset(k, f, rng)
    r = restrict(k, f, f2, fs)
    bad["restrict (1) valid"] += not is_valid(k, r)
    bad["restrict (2) <= f*"] += not leq(k, r, fs)
    bad["restrict (3) sub f'"] += not subseteq(k, r, f2)
    for _ in range(3):
        h = random_below(k, fs, rng)
        if subseteq(k, h, f2):
            bad["restrict (4) unique"] += h != r
    g = random_subset(k, f, rng)
    gs = random_subset(k, g, rng)
    fs2 = rng.choice([x for x in (f, g, gs, fs) if subseteq(k, gs, x)])
    bad["restrict (5) sub-monotone"] += not subseteq(
        k, restrict(k, g, restrict(k, f, f2, g), gs), restrict(k, f, f2, fs2)
    )
    g = random_below(k, f, rng)
    bad["restrict (6) leq-monotone"] += not leq(k, restrict(k, g, min3(k, f, g, f2), restrict(k, f, g, fs)), r)


def test_criterion_1_fragment_algebra():
    with criterion(1, "fragment algebra laws") as notes:
        t0 = time.perf_counter()
        bad, seen = Counter(), Counter()
        kinds = kinds_of(BENCH)
        for k in kinds:
            _exhaustive_laws(k, bad, seen)
        rng = random.Random(1)
        deep = 0
        while deep < 1200:
            k = kinds[deep % len(kinds)]
            f = random_fragment(k, rng, depth=rng.choice((3, 4)))
            _random_laws(k, f, rng, bad)
            deep += 1
        elapsed = time.perf_counter() - t0
        notes.update(kinds=len(kinds), exhaustive=seen["fragments"], random=deep, violations=sum(bad.values()))
        assert not +bad, dict(+bad)
        assert len(set(bad)) == 19  # every law and clause was exercised
        assert elapsed <= 120, elapsed


# ------------------------------------------------------------- 2: below


def test_criterion_2_enumerate_below_exact():
    with criterion(2, "enumerate_below exactness") as notes:
        checked = 0
        for k in kinds_of(BENCH):
            cands = candidates(k, 2)
            for f in valid_pool(k, 2):
                got = enumerate_below(k, f)
                want = sorted((g for g in cands if is_valid(k, g) and leq(k, g, f)), key=encode)
                assert got == want, encode(f)
                assert set(got) == oracles.below(k, f), encode(f)
                checked += 1
        I012 = imap({0: STAR, 1: STAR, 2: STAR})
        count = len(enumerate_below(kind_of("A", parse_formula("/\\{n in N} U_n(c_0)")), I012))
        notes.update(fragments=checked, dom012=count)
        assert count == 8


# --------------------------------------------------------- 3: coherence


def _union_clauses(k, fam, rng, bad, seen):
    assert is_coherent(k, fam)
    U = union_coherent(k, fam)
    bad["subsets coherent"] += sum(
        not is_coherent(k, sub) for r in range(1, len(fam) + 1) for sub in itertools.combinations(fam, r)
    )
    bad["union valid"] += not is_valid(k, U)
    bad["union upper bound"] += sum(not subseteq(k, f, U) for f in fam)
    bad["union of singleton"] += sum(union_coherent(k, [f]) != f for f in fam)
    # sigma: each new member is included in some old one
    G = [random_subset(k, rng.choice(fam), rng) for _ in range(rng.randint(1, 3))]
    bad["sigma coherent"] += not is_coherent(k, G)
    bad["sigma monotone"] += not subseteq(k, union_coherent(k, G), U)
    # pi: one member below each old one, all inside a common coherent h
    h = random_below(k, U, rng)
    if in_F(k, h):
        G = [restrict(k, U, h, f) for f in fam]
        bad["pi monotone"] += not (is_coherent(k, G) and leq(k, union_coherent(k, G), U))
        seen["pi"] += 1


def _tilde_clauses(k, f, rng, bad):
    t = tilde(k, f)
    bad["tilde extends"] += not subseteq(k, f, t)
    bad["tilde idempotent"] += tilde(k, t) != t
    g = random_subset(k, f, rng)
    bad["tilde sub-monotone"] += not subseteq(k, tilde(k, g), t)
    g = random_below(k, f, rng)
    if in_F(k, g):
        bad["tilde leq-monotone"] += not leq(k, tilde(k, g), t)
    g = random_below(k, t, rng)
    if in_F(k, g):
        bad["tilde fixes what lies below"] += tilde(k, g) != g


def _extension_instance(k, rng):
    f = random_coherent(k, rng, depth=3)
    g = random_subset(k, f, rng)
    g2 = next((x for x in (random_below(k, g, rng) for _ in range(5)) if in_F(k, x)), g)
    K = []
    for _ in range(3):
        x = random_below(k, f, rng)
        if in_F(k, x) and leq(k, restrict(k, f, x, g), g2):
            K.append(x)
    return f, g, g2, K


def test_criterion_3_coherence_and_union():
    with criterion(3, "coherence, union, tilde and extension") as notes:
        bad, seen = Counter(), Counter()
        kinds = kinds_of(BENCH, (DOUBLE, CLASH))
        rng = random.Random(3)
        families = attempts = 0
        while families < 520 and attempts < 5000:
            k = kinds[attempts % len(kinds)]
            attempts += 1
            parent = random_coherent(k, rng, depth=3)
            fam = coherent_family(k, parent, rng, rng.randint(2, 5))
            _union_clauses(k, fam, rng, bad, seen)
            # singletons are checked too, but only larger families count
            families += len(fam) > 1

        fn_kinds = [k for k in kinds if k.tag == "fn"]
        tildes = 0
        while tildes < 220:
            k = fn_kinds[tildes % len(fn_kinds)]
            _tilde_clauses(k, random_coherent(k, rng, depth=3), rng, bad)
            tildes += 1

        runs = []

        @settings(max_examples=130)
        @given(st.integers(0, len(kinds) - 1), st.integers(0, 2**32))
        def extension(i, seed):
            k = kinds[i]
            f, g, g2, K = _extension_instance(k, random.Random(seed))
            out = coherent_extension(k, f, g, g2, K)
            assert in_F(k, out) and leq(k, out, f) and subseteq(k, g2, out)
            assert all(leq(k, x, out) for x in K)
            runs.append(len(K))

        extension()
        notes.update(families=families, pi_cases=seen["pi"], tilde=tildes, extensions=len(runs))
        assert not +bad, dict(+bad)
        assert families >= 500
        assert len(runs) >= 100 and sum(runs) > 0


# --------------------------------------------------------- 4: decisiveness

LEMMA_STRUCTS = [random_structure(random.Random(s), 1 + s % 4) for s in range(10)] + [
    gen_sequence_space(i, kind) for i in (0, 3) for kind in ("alternating", "parity")
]


def _collect(make, target, rng, tries=3000):
    found = {}
    names = sorted(TEMPLATES)
    for j in range(tries):
        got = make(rng, names[j % len(names)])
        if got is not None:
            found.setdefault(got, None)
        if len(found) >= target:
            break
    return list(found)


def test_criterion_4_decisiveness_lemmas():
    with criterion(4, "decisiveness lemmas") as notes:
        rng = random.Random(4)
        pools = {name: parent_pool(rng, name, 10) for name in sorted(TEMPLATES)}

        def shrink(rng, name):
            f, a, e = rng.choice(pools[name]) if rng.random() < 0.5 else template_pair(rng, name)
            a2, e2 = shrunk_pair(rng, f, a, e)
            return f, a, e, a2, e2

        down = _collect(shrink, 320, rng)
        up = _collect(lambda r, n: upward_instance(r, n, parents=pools[n]), 320, rng)
        agree = _collect(lambda r, n: agreement_instance(r, n, parents=pools[n]), 320, rng)
        notes.update(downward=len(down), upward=len(up), agreement=len(agree))
        assert min(len(down), len(up), len(agree)) >= 300

        bad = Counter()
        for f, a, e, a2, e2 in down:
            bad["downward"] += not is_decisive(a2, e2, f)
        for f, a, e, a2, e2 in up:
            bad["upward"] += not is_decisive(a2, e2, f)
            bad["upward value"] += sum(eval_bounded(M, (a, e), f) != eval_bounded(M, (a2, e2), f) for M in LEMMA_STRUCTS)
        for f, p0, p1 in agree:
            bad["agreement"] += sum(eval_bounded(M, p0, f) != eval_bounded(M, p1, f) for M in LEMMA_STRUCTS)
        assert not +bad, dict(+bad)


# ------------------------------------------------------------ 5: compiler


def test_criterion_5_compiler_soundness():
    with criterion(5, "compiler soundness") as notes:
        t0 = time.perf_counter()
        rng = random.Random(5)
        structs = [random_structure(random.Random(500 + s), 1 + s % 4) for s in range(50)]
        cases = instances(rng, 470)
        for name in BENCH:
            f = benchmark(name)
            for _ in range(10):
                if name == "fo":
                    p = fo_decisive_pair(f)
                else:
                    A = BNat(rng.randint(0, 3))
                    E = BNat(rng.randint(0, 3))
                    if name == "pi3":
                        A = BPair(A.n, random_mono(rng))
                    p = fragment_of(A, E, f)
                cases.append((f, p.a, p.e))
        checks = mismatches = 0
        for f, a, e in cases:
            g = compile_fo((a, e), f)
            assert is_first_order(g) and free_vars(g) <= free_vars(f)
            for M in structs:
                for env in envs(M, f):
                    checks += 1
                    mismatches += eval_fo(M, g, env) != eval_bounded(M, (a, e), f, env)
        elapsed = time.perf_counter() - t0
        notes.update(instances=len(cases), checks=checks, mismatches=mismatches)
        assert mismatches == 0
        assert elapsed <= 300, elapsed


# ------------------------------------------------------------ 6: collapse


def test_criterion_6_collapse():
    with criterion(6, "collapse equivalences") as notes:
        rng = random.Random(6)
        Fs = [random_mono(rng, top=5) for _ in range(10)]
        structs = [random_structure(random.Random(600 + s), 1 + s % 4) for s in range(12)]
        structs += [gen_sequence_space(i, kind) for i in range(0, 8, 2) for kind in ("alternating", "parity")]
        ns = range(5)
        cases = [("pi1", BNat(N), BStar()) for N in ns]
        cases += [("pi2", BNat(N), BNat(M)) for N in ns for M in ns]
        cases += [("sigma2", BMono(F), BNat(E)) for F in Fs for E in ns]
        cases += [("pi3", BPair(N, F), BNat(E)) for N in ns for F in Fs for E in ns]
        mismatches = 0
        for name, A, E in cases:
            p = fragment_of(A, E, SENTENCES[name])
            mismatches += sum(eval_bounded(M, p) != direct(name, M, A, E) for M in structs)
        notes.update(bound_pairs=len(cases), structures=len(structs), mismatches=mismatches)
        assert mismatches == 0


# ------------------------------------------------------ 7: metastability

STEP_FNS = [
    "mono:0->1",
    "mono:0->3,2->9",
    "m+mono:0->1",
    "m+mono:0->5,3->7",
    "mono:0->7",
    "mono:0->11,1->15",
    "m+mono:0->13",
    "mono:0->17,4->30",
    "m+mono:0->19",
    "mono:0->9,1->10,5->40",
]


def test_criterion_7_metastability_example():
    with criterion(7, "metastability example") as notes:
        t0 = time.perf_counter()
        fam = sequence_family("alternating", 40, 20)
        # (a) no sequence settles: past every m there is a point at distance 1
        for i, M in enumerate(fam.structures):
            c, d = M.const_rules["c"].value, M.metric.distance
            for m in range(2 * i + 4):
                assert any(d(c(m), c(k)) == 1 for k in range(m + 1, 2 * i + 5)), (i, m)
        cap = 6
        combos = 0
        for eps in (Fraction(1), Fraction(1, 2), Fraction(1, 4)):
            for text in STEP_FNS:
                F = MonotoneFn.parse(text)
                assert F(0) % 2 == 1 and F(0) < 20
                direct_r = check_metastable(fam, eps, F, cap)
                m = direct_r.winner
                # (b) an even witness whose satisfying set is exactly the indices past F(m)
                assert m is not None and m % 2 == 0, (eps, text)
                assert direct_r.sat(m) == frozenset(range(F(m) + 1, 40)), (eps, text)
                # (c) the convergence sentence under the matching bound agrees
                via = check_family(fam, CONVERGENCE, BPair(epsilon_level(eps), F), cap)
                assert via.verdict == direct_r.verdict and via.winner == m
                assert via.sat(m) == direct_r.sat(m)
                for E in range(cap + 1):
                    assert via.sat(E) == frozenset().union(*(direct_r.sat(j) for j in range(E + 1)))
                combos += 1
        elapsed = time.perf_counter() - t0
        notes.update(structures=len(fam), combinations=combos)
        assert elapsed <= 60, elapsed


# ------------------------------------------------------ 8: negative control


def test_criterion_8_parity_control():
    with criterion(8, "parity negative control") as notes:
        fam = sequence_family("parity", 40, 20)
        F = MonotoneFn.parse("m+mono:0->1")
        eps = Fraction(1, 2)
        full = check_family(fam, CONVERGENCE, BPair(epsilon_level(eps), F), 50)
        assert not full.verdict and all(not s for _, s in full.candidates)
        for cap in range(51):
            direct_r = check_metastable(fam, eps, F, cap)
            assert not direct_r.verdict and all(not s for _, s in direct_r.candidates)
        for cap in (0, 7, 20):
            # smaller caps see a prefix of the same candidates
            part = check_family(fam, CONVERGENCE, BPair(epsilon_level(eps), F), cap)
            assert part.candidates == full.candidates[: cap + 1] and not part.verdict
        notes.update(caps="0..50", winners="none")
