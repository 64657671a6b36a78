"""Dup/drop insertion: from implicit sharing to an explicitly linear core.

The insertion pass walks a surface term bottom-up.  Where the free
variables of the two sides of a multiplicative form (application, pair,
swap, let) intersect, the shared variables are duplicated; a binder whose
variable goes unused gets a drop immediately under it, as does a variable
used in one case branch but not the other.

Annotated terms carry dup/drop over *multisets* of variables, which keeps
the algorithm free of renaming concerns; `lower` then expands each region
into binary dup/drop binders with machine-generated copy names (`x#1`,
`x#2`, ...; source programs cannot contain `#`).

`demand` computes the unique context under which an annotated term is well
formed, if any: variables demand themselves, binders consume exactly one
binding, multiplicative forms sum their sides, case branches must agree,
a dup region provides two copies per listed occurrence and a drop region
discards its listing.  `enumerate_annotations` searches the same rule
space exhaustively and is the oracle against which insertion's optimality
is tested.
"""

from __future__ import annotations

import itertools
from typing import Iterable, Iterator

from .errors import ClampError
from . import syntax as S
from .syntax import (
    App, Case, DropBind, DropCtx, DupBind, DupCtx, EMPTY_MULTISET, Inl, Inr,
    Lam, Let, LetPair, Loc, New, Pair, Release, Swap, Term, UnitVal, Var,
    VarMultiset,
)


class IllFormedAnnotation(ClampError):
    """Raised by the demand calculation on the first failing subterm."""

    def __init__(self, message: str, subterm: Term):
        super().__init__(message)
        self.subterm = subterm


# ---------------------------------------------------------------------------
# Free variables (all term layers, shadowing-aware)


def free_vars(t: Term) -> frozenset[str]:
    if isinstance(t, Var):
        return frozenset((t.name,))
    if isinstance(t, (UnitVal, Loc)):
        return frozenset()
    if isinstance(t, Lam):
        return free_vars(t.body) - {t.param}
    if isinstance(t, App):
        return free_vars(t.fn) | free_vars(t.arg)
    if isinstance(t, (Pair, Swap)):
        a, b = S.children(t)
        return free_vars(a) | free_vars(b)
    if isinstance(t, Let):
        return free_vars(t.rhs) | (free_vars(t.body) - {t.name})
    if isinstance(t, LetPair):
        return free_vars(t.rhs) | (free_vars(t.body) - {t.x1, t.x2})
    if isinstance(t, (Inl, Inr, New)):
        return free_vars(t.value)
    if isinstance(t, Release):
        return free_vars(t.ref)
    if isinstance(t, Case):
        return (free_vars(t.scrut)
                | (free_vars(t.lbody) - {t.lvar})
                | (free_vars(t.rbody) - {t.rvar}))
    if isinstance(t, (DupCtx, DropCtx)):
        return frozenset(t.vars.names()) | free_vars(t.body)
    if isinstance(t, DupBind):
        return free_vars(t.src) | (free_vars(t.body) - {t.x1, t.x2})
    if isinstance(t, DropBind):
        return free_vars(t.src) | free_vars(t.body)
    raise TypeError(f"not a term: {t!r}")


# ---------------------------------------------------------------------------
# Insertion


def insert(e: Term, toplevel: frozenset[str] = frozenset()) -> Term:
    """Annotate a surface term with the dup/drop regions that make it
    linear.  Occurrences of `toplevel` names are ignored: each one counts
    as a fresh reference and is never duplicated or dropped."""
    ann, _ = _ins(e, frozenset(toplevel))
    return ann


def _ins(e: Term, exempt: frozenset[str]) -> tuple[Term, frozenset[str]]:
    if isinstance(e, Var):
        fv = frozenset() if e.name in exempt else frozenset((e.name,))
        return e, fv
    if isinstance(e, UnitVal):
        return e, frozenset()
    if isinstance(e, Lam):
        body, fvb = _ins(e.body, exempt - {e.param})
        if e.param not in fvb:
            body = DropCtx(VarMultiset.of((e.param,)), body, e.span)
        return Lam(e.qual, e.param, body, e.span), fvb - {e.param}
    if isinstance(e, (App, Pair, Swap)):
        a, b = S.children(e)
        a2, fva = _ins(a, exempt)
        b2, fvb = _ins(b, exempt)
        if isinstance(e, App):
            node: Term = App(a2, b2, e.span)
        elif isinstance(e, Pair):
            node = Pair(a2, b2, e.span)
        else:
            node = Swap(e.qual, a2, b2, e.span)
        return _dup_over(fva & fvb, node, e.span), fva | fvb
    if isinstance(e, Let):
        rhs, fvr = _ins(e.rhs, exempt)
        body, fvb = _ins(e.body, exempt - {e.name})
        if e.name not in fvb:
            body = DropCtx(VarMultiset.of((e.name,)), body, e.span)
        fvb -= {e.name}
        node = Let(e.name, rhs, body, e.span)
        return _dup_over(fvr & fvb, node, e.span), fvr | fvb
    if isinstance(e, LetPair):
        rhs, fvr = _ins(e.rhs, exempt)
        body, fvb = _ins(e.body, exempt - {e.x1, e.x2})
        unused = tuple(x for x in (e.x1, e.x2) if x not in fvb)
        if unused:
            body = DropCtx(VarMultiset.of(unused), body, e.span)
        fvb -= {e.x1, e.x2}
        node = LetPair(e.x1, e.x2, rhs, body, e.span)
        return _dup_over(fvr & fvb, node, e.span), fvr | fvb
    if isinstance(e, (Inl, Inr, New)):
        sub, fv = _ins(e.value, exempt)
        ctor = type(e)
        node = New(e.qual, sub, e.span) if isinstance(e, New) else ctor(sub, e.span)
        return node, fv
    if isinstance(e, Release):
        sub, fv = _ins(e.ref, exempt)
        return Release(e.qual, sub, e.span), fv
    if isinstance(e, Case):
        scrut, fvs = _ins(e.scrut, exempt)
        lbody, fvl = _ins(e.lbody, exempt - {e.lvar})
        rbody, fvr = _ins(e.rbody, exempt - {e.rvar})
        lmiss = frozenset() if e.lvar in fvl else frozenset((e.lvar,))
        rmiss = frozenset() if e.rvar in fvr else frozenset((e.rvar,))
        fvl -= {e.lvar}
        fvr -= {e.rvar}
        # each branch drops its unused binder and the other branch's extras
        ldrop = (fvr - fvl) | lmiss
        rdrop = (fvl - fvr) | rmiss
        if ldrop:
            lbody = DropCtx(VarMultiset.of(sorted(ldrop)), lbody, e.span)
        if rdrop:
            rbody = DropCtx(VarMultiset.of(sorted(rdrop)), rbody, e.span)
        branch_fv = fvl | fvr
        node = Case(scrut, e.lvar, lbody, e.rvar, rbody, e.span)
        return _dup_over(fvs & branch_fv, node, e.span), fvs | branch_fv
    raise TypeError(f"insert expects a surface term, got {type(e).__name__}")


def _dup_over(shared: frozenset[str], node: Term, span) -> Term:
    if shared:
        return DupCtx(VarMultiset.of(sorted(shared)), node, span)
    return node


# ---------------------------------------------------------------------------
# Erasure


def erase(ae: Term) -> Term:
    if isinstance(ae, (Var, UnitVal)):
        return ae
    if isinstance(ae, (DupCtx, DropCtx)):
        return erase(ae.body)
    if isinstance(ae, Lam):
        return Lam(ae.qual, ae.param, erase(ae.body), ae.span)
    if isinstance(ae, App):
        return App(erase(ae.fn), erase(ae.arg), ae.span)
    if isinstance(ae, Pair):
        return Pair(erase(ae.fst), erase(ae.snd), ae.span)
    if isinstance(ae, Let):
        return Let(ae.name, erase(ae.rhs), erase(ae.body), ae.span)
    if isinstance(ae, LetPair):
        return LetPair(ae.x1, ae.x2, erase(ae.rhs), erase(ae.body), ae.span)
    if isinstance(ae, Inl):
        return Inl(erase(ae.value), ae.span)
    if isinstance(ae, Inr):
        return Inr(erase(ae.value), ae.span)
    if isinstance(ae, Case):
        return Case(erase(ae.scrut), ae.lvar, erase(ae.lbody),
                    ae.rvar, erase(ae.rbody), ae.span)
    if isinstance(ae, New):
        return New(ae.qual, erase(ae.value), ae.span)
    if isinstance(ae, Release):
        return Release(ae.qual, erase(ae.ref), ae.span)
    if isinstance(ae, Swap):
        return Swap(ae.qual, erase(ae.ref), erase(ae.value), ae.span)
    raise TypeError(f"erase expects an annotated term, got {type(ae).__name__}")


# ---------------------------------------------------------------------------
# Well-formedness


def demand(ae: Term) -> VarMultiset:
    """The unique context under which `ae` is well formed.

    Raises IllFormedAnnotation at the first subterm whose demands cannot
    be met by any context.
    """
    if isinstance(ae, Var):
        return VarMultiset.of((ae.name,))
    if isinstance(ae, UnitVal):
        return EMPTY_MULTISET
    if isinstance(ae, Lam):
        return _consume_binder(demand(ae.body), ae.param, ae)
    if isinstance(ae, (App, Pair, Swap)):
        a, b = S.children(ae)
        return demand(a) + demand(b)
    if isinstance(ae, Let):
        return demand(ae.rhs) + _consume_binder(demand(ae.body), ae.name, ae)
    if isinstance(ae, LetPair):
        d = demand(ae.body)
        d = _consume_binder(d, ae.x1, ae)
        d = _consume_binder(d, ae.x2, ae)
        return demand(ae.rhs) + d
    if isinstance(ae, (Inl, Inr, New)):
        return demand(ae.value)
    if isinstance(ae, Release):
        return demand(ae.ref)
    if isinstance(ae, Case):
        dl = _consume_binder(demand(ae.lbody), ae.lvar, ae)
        dr = _consume_binder(demand(ae.rbody), ae.rvar, ae)
        if dl != dr:
            raise IllFormedAnnotation(
                f"case branches demand different contexts {dl} and {dr}", ae)
        return demand(ae.scrut) + dl
    if isinstance(ae, DupCtx):
        if ae.vars.is_empty():
            raise IllFormedAnnotation("empty dup region", ae)
        inner = demand(ae.body)
        if not (ae.vars + ae.vars).leq(inner):
            raise IllFormedAnnotation(
                f"dup {ae.vars} needs two uses per copy inside, found {inner}", ae)
        return inner.minus(ae.vars)
    if isinstance(ae, DropCtx):
        if ae.vars.is_empty():
            raise IllFormedAnnotation("empty drop region", ae)
        return demand(ae.body) + ae.vars
    raise TypeError(f"demand expects an annotated term, got {type(ae).__name__}")


def _consume_binder(d: VarMultiset, name: str, node: Term) -> VarMultiset:
    k = d.count(name)
    if k != 1:
        raise IllFormedAnnotation(
            f"binder {name!r} must be used exactly once, body demands {k}", node)
    return d.remove_all(name)


def well_formed(ctx: VarMultiset | Iterable[str], ae: Term) -> bool:
    """Decide whether `ctx |- ae` is derivable."""
    if not isinstance(ctx, VarMultiset):
        ctx = VarMultiset.of(ctx)
    try:
        return demand(ae) == ctx
    except IllFormedAnnotation:
        return False


def well_formed_report(ctx: VarMultiset, ae: Term) -> str | None:
    """None when well formed, otherwise a description of the first failure."""
    try:
        d = demand(ae)
    except IllFormedAnnotation as exc:
        return f"{exc.message} (in {S.pretty_term(exc.subterm)})"
    if d != ctx:
        return f"term demands {d} but was checked under {ctx}"
    return None


# ---------------------------------------------------------------------------
# Lowering to binary dup/drop


def lower(ae: Term, free_ctx: VarMultiset | None = None) -> Term:
    """Expand multiset dup/drop regions into binary binder chains.

    Precondition: `ae` is well formed under the free variables of its
    erasure (or under `free_ctx` when names exempt from insertion are in
    play); violated preconditions surface as IllFormedAnnotation.
    """
    d = demand(ae)  # raises on ill-formed input
    if free_ctx is None:
        free_ctx = VarMultiset.of(free_vars(erase(ae)))
    if free_ctx != d:
        raise IllFormedAnnotation(
            f"lowering requires well-formedness under {free_ctx}, demands {d}", ae)
    counter = itertools.count(1)
    return _lower(ae, counter)


def _copy_base(name: str) -> str:
    return name.split("#", 1)[0]


def _lower(t: Term, counter: Iterator[int]) -> Term:
    if isinstance(t, (Var, UnitVal, Loc)):
        return t
    if isinstance(t, DupCtx):
        body = _lower(t.body, counter)
        wraps: list[tuple[str, str, str]] = []
        for name, k in t.vars:
            for _ in range(k):
                n1 = f"{_copy_base(name)}#{next(counter)}"
                n2 = f"{_copy_base(name)}#{next(counter)}"
                body = _rename_first_free(body, name, [n1, n2])
                wraps.append((name, n1, n2))
        for name, n1, n2 in reversed(wraps):
            body = DupBind(Var(name, t.span), n1, n2, body, t.span)
        return body
    if isinstance(t, DropCtx):
        body = _lower(t.body, counter)
        for name, k in reversed(t.vars.entries):
            for _ in range(k):
                body = DropBind(Var(name, t.span), body, t.span)
        return body
    if isinstance(t, Lam):
        return Lam(t.qual, t.param, _lower(t.body, counter), t.span)
    if isinstance(t, App):
        return App(_lower(t.fn, counter), _lower(t.arg, counter), t.span)
    if isinstance(t, Pair):
        return Pair(_lower(t.fst, counter), _lower(t.snd, counter), t.span)
    if isinstance(t, Let):
        return Let(t.name, _lower(t.rhs, counter), _lower(t.body, counter), t.span)
    if isinstance(t, LetPair):
        return LetPair(t.x1, t.x2, _lower(t.rhs, counter),
                       _lower(t.body, counter), t.span)
    if isinstance(t, Inl):
        return Inl(_lower(t.value, counter), t.span)
    if isinstance(t, Inr):
        return Inr(_lower(t.value, counter), t.span)
    if isinstance(t, Case):
        return Case(_lower(t.scrut, counter), t.lvar, _lower(t.lbody, counter),
                    t.rvar, _lower(t.rbody, counter), t.span)
    if isinstance(t, New):
        return New(t.qual, _lower(t.value, counter), t.span)
    if isinstance(t, Release):
        return Release(t.qual, _lower(t.ref, counter), t.span)
    if isinstance(t, Swap):
        return Swap(t.qual, _lower(t.ref, counter), _lower(t.value, counter), t.span)
    if isinstance(t, DupBind):
        return DupBind(_lower(t.src, counter), t.x1, t.x2,
                       _lower(t.body, counter), t.span)
    if isinstance(t, DropBind):
        return DropBind(_lower(t.src, counter), _lower(t.body, counter), t.span)
    raise TypeError(f"not a term: {t!r}")


def _rename_first_free(t: Term, name: str, todo: list[str]) -> Term:
    """Replace the leftmost free occurrences of `name` with the given copy
    names, one occurrence per name, respecting shadowing."""
    new_t, _ = _rename_walk(t, name, tuple(todo))
    return new_t


def _rename_walk(t: Term, name: str, todo: tuple[str, ...]) -> tuple[Term, tuple[str, ...]]:
    if not todo:
        return t, todo
    if isinstance(t, Var):
        if t.name == name:
            return Var(todo[0], t.span), todo[1:]
        return t, todo
    if isinstance(t, (UnitVal, Loc)):
        return t, todo
    if isinstance(t, Lam):
        if t.param == name:
            return t, todo
        body, todo = _rename_walk(t.body, name, todo)
        return Lam(t.qual, t.param, body, t.span), todo
    if isinstance(t, App):
        fn, todo = _rename_walk(t.fn, name, todo)
        arg, todo = _rename_walk(t.arg, name, todo)
        return App(fn, arg, t.span), todo
    if isinstance(t, Pair):
        fst, todo = _rename_walk(t.fst, name, todo)
        snd, todo = _rename_walk(t.snd, name, todo)
        return Pair(fst, snd, t.span), todo
    if isinstance(t, Let):
        rhs, todo = _rename_walk(t.rhs, name, todo)
        if t.name == name:
            return Let(t.name, rhs, t.body, t.span), todo
        body, todo = _rename_walk(t.body, name, todo)
        return Let(t.name, rhs, body, t.span), todo
    if isinstance(t, LetPair):
        rhs, todo = _rename_walk(t.rhs, name, todo)
        if name in (t.x1, t.x2):
            return LetPair(t.x1, t.x2, rhs, t.body, t.span), todo
        body, todo = _rename_walk(t.body, name, todo)
        return LetPair(t.x1, t.x2, rhs, body, t.span), todo
    if isinstance(t, Inl):
        v, todo = _rename_walk(t.value, name, todo)
        return Inl(v, t.span), todo
    if isinstance(t, Inr):
        v, todo = _rename_walk(t.value, name, todo)
        return Inr(v, t.span), todo
    if isinstance(t, Case):
        scrut, todo = _rename_walk(t.scrut, name, todo)
        lbody = t.lbody
        if t.lvar != name:
            lbody, todo = _rename_walk(t.lbody, name, todo)
        rbody = t.rbody
        if t.rvar != name:
            rbody, todo = _rename_walk(t.rbody, name, todo)
        return Case(scrut, t.lvar, lbody, t.rvar, rbody, t.span), todo
    if isinstance(t, New):
        v, todo = _rename_walk(t.value, name, todo)
        return New(t.qual, v, t.span), todo
    if isinstance(t, Release):
        r, todo = _rename_walk(t.ref, name, todo)
        return Release(t.qual, r, t.span), todo
    if isinstance(t, Swap):
        r, todo = _rename_walk(t.ref, name, todo)
        v, todo = _rename_walk(t.value, name, todo)
        return Swap(t.qual, r, v, t.span), todo
    if isinstance(t, DupBind):
        src, todo = _rename_walk(t.src, name, todo)
        if name in (t.x1, t.x2):
            return DupBind(src, t.x1, t.x2, t.body, t.span), todo
        body, todo = _rename_walk(t.body, name, todo)
        return DupBind(src, t.x1, t.x2, body, t.span), todo
    if isinstance(t, DropBind):
        src, todo = _rename_walk(t.src, name, todo)
        body, todo = _rename_walk(t.body, name, todo)
        return DropBind(src, body, t.span), todo
    raise TypeError(f"not a lowered term: {t!r}")


# ---------------------------------------------------------------------------
# Linearity of internal terms


def linearity_check(t: Term, exempt: frozenset[str] = frozenset()) -> bool:
    """True iff every variable is used exactly once in its scope (names in
    `exempt` are unrestricted while not shadowed)."""
    try:
        _uses(t, frozenset(exempt))
        return True
    except _NotLinear:
        return False


class _NotLinear(Exception):
    pass


def _use_once(uses: dict[str, int], name: str) -> None:
    if uses.pop(name, 0) != 1:
        raise _NotLinear


def _merge(a: dict[str, int], b: dict[str, int]) -> dict[str, int]:
    for k, v in b.items():
        a[k] = a.get(k, 0) + v
    return a


def _uses(t: Term, exempt: frozenset[str]) -> dict[str, int]:
    if isinstance(t, Var):
        return {} if t.name in exempt else {t.name: 1}
    if isinstance(t, (UnitVal, Loc)):
        return {}
    if isinstance(t, Lam):
        u = _uses(t.body, exempt - {t.param})
        _use_once(u, t.param)
        return u
    if isinstance(t, (App, Pair, Swap)):
        a, b = S.children(t)
        return _merge(_uses(a, exempt), _uses(b, exempt))
    if isinstance(t, Let):
        u = _uses(t.body, exempt - {t.name})
        _use_once(u, t.name)
        return _merge(_uses(t.rhs, exempt), u)
    if isinstance(t, LetPair):
        u = _uses(t.body, exempt - {t.x1, t.x2})
        _use_once(u, t.x1)
        _use_once(u, t.x2)
        return _merge(_uses(t.rhs, exempt), u)
    if isinstance(t, (Inl, Inr, New)):
        return _uses(t.value, exempt)
    if isinstance(t, Release):
        return _uses(t.ref, exempt)
    if isinstance(t, Case):
        ul = _uses(t.lbody, exempt - {t.lvar})
        _use_once(ul, t.lvar)
        ur = _uses(t.rbody, exempt - {t.rvar})
        _use_once(ur, t.rvar)
        if ul != ur:
            raise _NotLinear
        return _merge(_uses(t.scrut, exempt), ul)
    if isinstance(t, DupBind):
        u = _uses(t.body, exempt - {t.x1, t.x2})
        _use_once(u, t.x1)
        _use_once(u, t.x2)
        return _merge(_uses(t.src, exempt), u)
    if isinstance(t, DropBind):
        return _merge(_uses(t.src, exempt), _uses(t.body, exempt))
    raise TypeError(f"linearity check expects an internal term, got {type(t).__name__}")


# ---------------------------------------------------------------------------
# Exhaustive annotation oracle


MAX_ENUM_SIZE = 12
MAX_ENUM_BUDGET = 4


def _check_limits(e: Term, budget: int, max_size: int, max_budget: int) -> None:
    size = S.term_size(e)
    if size > max_size:
        raise ValueError(f"term size {size} beyond enumeration limit {max_size}")
    if budget > max_budget:
        raise ValueError(f"budget {budget} beyond enumeration limit {max_budget}")


def _sub_multisets(ms: VarMultiset, nonempty: bool) -> Iterator[VarMultiset]:
    names = [n for n, _ in ms.entries]
    ranges = [range(k + 1) for _, k in ms.entries]
    for choice in itertools.product(*ranges):
        if nonempty and not any(choice):
            continue
        yield VarMultiset(tuple((n, c) for n, c in zip(names, choice) if c))


def _splits(ms: VarMultiset) -> Iterator[tuple[VarMultiset, VarMultiset]]:
    for left in _sub_multisets(ms, nonempty=False):
        yield left, ms.minus(left)


def ann_node_count(t: Term) -> int:
    n = 1 if isinstance(t, (DupCtx, DropCtx)) else 0
    return n + sum(ann_node_count(c) for c in S.children(t))


def enumerate_annotations(e: Term, budget: int,
                          ctx: VarMultiset | Iterable[str] | None = None,
                          *, max_size: int = MAX_ENUM_SIZE,
                          max_budget: int = MAX_ENUM_BUDGET) -> list[Term]:
    """Every annotated term that erases to `e`, uses at most `budget`
    dup/drop regions over in-scope variables, and is well formed under
    `ctx` (default: the free variables of `e`, one each).

    Exhaustive up to the budget; the result order is deterministic.
    """
    _check_limits(e, budget, max_size, max_budget)
    if ctx is None:
        ctx = VarMultiset.of(free_vars(e))
    elif not isinstance(ctx, VarMultiset):
        ctx = VarMultiset.of(ctx)
    memo: dict = {}
    results = _gen(e, ctx, budget, memo)
    return sorted(results, key=lambda t: (ann_node_count(t), S.pretty_term(t)))


def _gen(e: Term, ctx: VarMultiset, budget: int, memo: dict) -> frozenset[Term]:
    key = (id(e), ctx, budget)
    hit = memo.get(key)
    if hit is not None:
        return hit
    out: set[Term] = set()
    out.update(_gen_bare(e, ctx, budget, memo))
    if budget > 0:
        for d in _sub_multisets(ctx, nonempty=True):
            for inner in _gen(e, ctx.minus(d), budget - 1, memo):
                out.add(DropCtx(d, inner))
            # dup of d is admissible iff d <= ctx: the doubled copies must
            # be consumed below, leaving ctx - d + 2d = ctx + d inside
            for inner in _gen(e, ctx + d, budget - 1, memo):
                out.add(DupCtx(d, inner))
    frozen = frozenset(out)
    memo[key] = frozen
    return frozen


def _gen_bare(e: Term, ctx: VarMultiset, budget: int, memo: dict) -> Iterator[Term]:
    if isinstance(e, Var):
        if ctx.entries == ((e.name, 1),):
            yield e
        return
    if isinstance(e, UnitVal):
        if ctx.is_empty():
            yield e
        return
    if isinstance(e, Lam):
        if e.param in ctx:
            return
        for body in _gen(e.body, ctx.add(e.param), budget, memo):
            yield Lam(e.qual, e.param, body)
        return
    if isinstance(e, (App, Pair, Swap)):
        a, b = S.children(e)
        for ca, cb in _splits(ctx):
            for ta in _gen(a, ca, budget, memo):
                rest = budget - ann_node_count(ta)
                for tb in _gen(b, cb, rest, memo):
                    if isinstance(e, App):
                        yield App(ta, tb)
                    elif isinstance(e, Pair):
                        yield Pair(ta, tb)
                    else:
                        yield Swap(e.qual, ta, tb)
        return
    if isinstance(e, Let):
        for cr, cb in _splits(ctx):
            if e.name in cb:
                continue
            for tr in _gen(e.rhs, cr, budget, memo):
                rest = budget - ann_node_count(tr)
                for tb in _gen(e.body, cb.add(e.name), rest, memo):
                    yield Let(e.name, tr, tb)
        return
    if isinstance(e, LetPair):
        for cr, cb in _splits(ctx):
            if e.x1 in cb or e.x2 in cb:
                continue
            for tr in _gen(e.rhs, cr, budget, memo):
                rest = budget - ann_node_count(tr)
                for tb in _gen(e.body, cb.add(e.x1).add(e.x2), rest, memo):
                    yield LetPair(e.x1, e.x2, tr, tb)
        return
    if isinstance(e, (Inl, Inr, New)):
        for sub in _gen(e.value, ctx, budget, memo):
            if isinstance(e, New):
                yield New(e.qual, sub)
            elif isinstance(e, Inl):
                yield Inl(sub)
            else:
                yield Inr(sub)
        return
    if isinstance(e, Release):
        for sub in _gen(e.ref, ctx, budget, memo):
            yield Release(e.qual, sub)
        return
    if isinstance(e, Case):
        for cs, cbr in _splits(ctx):
            if e.lvar in cbr or e.rvar in cbr:
                continue
            for ts in _gen(e.scrut, cs, budget, memo):
                rest = budget - ann_node_count(ts)
                for tl in _gen(e.lbody, cbr.add(e.lvar), rest, memo):
                    rest2 = rest - ann_node_count(tl)
                    for tr in _gen(e.rbody, cbr.add(e.rvar), rest2, memo):
                        yield Case(ts, e.lvar, tl, e.rvar, tr)
        return
    raise TypeError(f"enumeration expects a surface term, got {type(e).__name__}")


# -- complete budgeted search over the same annotation space, used by the
#    optimality tests at scales where materializing every annotation would
#    be wasteful.  `forbid` prunes annotations whose dup ("dup") or drop
#    ("drop") regions mention the given variable; the search is otherwise
#    identical to _gen.


def annotation_exists(e: Term, budget: int,
                      ctx: VarMultiset | Iterable[str] | None = None,
                      forbid: tuple[str, str] | None = None,
                      memo: dict | None = None,
                      *, max_size: int = MAX_ENUM_SIZE,
                      max_budget: int = MAX_ENUM_BUDGET) -> bool:
    """Does any well-formed annotation of `e` under `ctx` exist within the
    budget (optionally avoiding every dup/drop region mentioning a
    variable)?  Decides the same space as enumerate_annotations."""
    _check_limits(e, budget, max_size, max_budget)
    if ctx is None:
        ctx = VarMultiset.of(free_vars(e))
    elif not isinstance(ctx, VarMultiset):
        ctx = VarMultiset.of(ctx)
    if memo is None:
        memo = {}
    return _search(e, ctx, budget, forbid, memo)


def _search(e: Term, ctx: VarMultiset, budget: int,
            forbid: tuple[str, str] | None, memo: dict) -> bool:
    key = (id(e), ctx, budget, forbid)
    hit = memo.get(key)
    if hit is not None:
        return hit
    memo[key] = False  # cycle-safe default; state space is acyclic anyway
    found = _search_bare(e, ctx, budget, forbid, memo)
    if not found and budget > 0:
        for d in _sub_multisets(ctx, nonempty=True):
            drop_ok = not (forbid is not None and forbid[0] == "drop" and forbid[1] in d)
            dup_ok = not (forbid is not None and forbid[0] == "dup" and forbid[1] in d)
            if drop_ok and _search(e, ctx.minus(d), budget - 1, forbid, memo):
                found = True
                break
            if dup_ok and _search(e, ctx + d, budget - 1, forbid, memo):
                found = True
                break
    memo[key] = found
    return found


def _search_bare(e: Term, ctx: VarMultiset, budget: int,
                 forbid: tuple[str, str] | None, memo: dict) -> bool:
    if isinstance(e, Var):
        return ctx.entries == ((e.name, 1),)
    if isinstance(e, UnitVal):
        return ctx.is_empty()
    if isinstance(e, Lam):
        if e.param in ctx:
            return False
        return _search(e.body, ctx.add(e.param), budget, forbid, memo)
    if isinstance(e, (App, Pair, Swap)):
        a, b = S.children(e)
        return _search_pair(a, b, (), ctx, budget, forbid, memo)
    if isinstance(e, Let):
        return _search_pair(e.rhs, e.body, ((e.name,),), ctx, budget, forbid, memo)
    if isinstance(e, LetPair):
        return _search_pair(e.rhs, e.body, ((e.x1, e.x2),), ctx, budget, forbid, memo)
    if isinstance(e, (Inl, Inr, New)):
        return _search(e.value, ctx, budget, forbid, memo)
    if isinstance(e, Release):
        return _search(e.ref, ctx, budget, forbid, memo)
    if isinstance(e, Case):
        for cs, cbr in _splits(ctx):
            if e.lvar in cbr or e.rvar in cbr:
                continue
            for ks in range(budget + 1):
                if not _search(e.scrut, cs, ks, forbid, memo):
                    continue
                rest = budget - ks
                for kl in range(rest + 1):
                    if (_search(e.lbody, cbr.add(e.lvar), kl, forbid, memo)
                            and _search(e.rbody, cbr.add(e.rvar), rest - kl,
                                        forbid, memo)):
                        return True
        return False
    raise TypeError(f"search expects a surface term, got {type(e).__name__}")


def _search_pair(a: Term, b: Term, b_binders: tuple[tuple[str, ...], ...],
                 ctx: VarMultiset, budget: int,
                 forbid: tuple[str, str] | None, memo: dict) -> bool:
    binders = b_binders[0] if b_binders else ()
    for ca, cb in _splits(ctx):
        if any(x in cb for x in binders):
            continue
        cb_full = cb
        for x in binders:
            cb_full = cb_full.add(x)
        for ka in range(budget + 1):
            if (_search(a, ca, ka, forbid, memo)
                    and _search(b, cb_full, budget - ka, forbid, memo)):
                return True
    return False


def mentioned_drops(ae: Term) -> frozenset[str]:
    """Variables mentioned by any drop region of an annotated term."""
    out: set[str] = set()
    if isinstance(ae, DropCtx):
        out.update(ae.vars.names())
    for c in S.children(ae):
        out.update(mentioned_drops(c))
    return frozenset(out)


def mentioned_dups(ae: Term) -> frozenset[str]:
    """Variables mentioned by any dup region of an annotated term."""
    out: set[str] = set()
    if isinstance(ae, DupCtx):
        out.update(ae.vars.names())
    for c in S.children(ae):
        out.update(mentioned_dups(c))
    return frozenset(out)
