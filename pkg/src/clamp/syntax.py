"""Core representations shared by every pipeline stage.

Defines types with qualified arrows, Dup/Drop predicates, type schemes,
and the layered term language:

  * surface terms   -- what the parser produces (sharing/discarding implicit)
  * annotated terms -- surface terms plus multiset dup/drop regions
  * internal terms  -- binary dup/drop binders and store locations

All values are immutable dataclasses; source spans are carried but ignored
by structural equality so pretty/reparse round trips compare clean.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Union

from .errors import Span


class ArrowQual(enum.Enum):
    """Usage discipline of a function value: how the closure itself may be
    duplicated or discarded."""

    U = "U"  # unlimited: dup and drop
    R = "R"  # relevant: dup only
    A = "A"  # affine: drop only
    L = "L"  # linear: neither

    def __str__(self) -> str:
        return self.value


class RefQual(enum.Enum):
    """Strength of a mutable reference: strong cells support type-changing
    updates and direct deallocation, weak cells support aliasing."""

    S = "s"
    W = "w"

    def __str__(self) -> str:
        return self.value


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class TVar:
    name: str


@dataclass(frozen=True)
class TArrow:
    dom: "Type"
    cod: "Type"
    qual: ArrowQual


@dataclass(frozen=True)
class TProd:
    left: "Type"
    right: "Type"


@dataclass(frozen=True)
class TSum:
    left: "Type"
    right: "Type"


@dataclass(frozen=True)
class TUnit:
    pass


@dataclass(frozen=True)
class TRef:
    qual: RefQual
    contents: "Type"


Type = Union[TVar, TArrow, TProd, TSum, TUnit, TRef]

UNIT_TYPE = TUnit()


def free_type_vars(t: Type) -> frozenset[str]:
    if isinstance(t, TVar):
        return frozenset((t.name,))
    if isinstance(t, TArrow):
        return free_type_vars(t.dom) | free_type_vars(t.cod)
    if isinstance(t, (TProd, TSum)):
        return free_type_vars(t.left) | free_type_vars(t.right)
    if isinstance(t, TRef):
        return free_type_vars(t.contents)
    return frozenset()


def type_key(t: Type) -> tuple:
    """Total syntactic order on types, used to canonicalize constraint sets
    and keep all printed output deterministic."""
    if isinstance(t, TVar):
        return (0, t.name)
    if isinstance(t, TUnit):
        return (1,)
    if isinstance(t, TProd):
        return (2, type_key(t.left), type_key(t.right))
    if isinstance(t, TSum):
        return (3, type_key(t.left), type_key(t.right))
    if isinstance(t, TArrow):
        return (4, t.qual.value, type_key(t.dom), type_key(t.cod))
    if isinstance(t, TRef):
        return (5, t.qual.value, type_key(t.contents))
    raise TypeError(f"not a type: {t!r}")


# ---------------------------------------------------------------------------
# Predicates and schemes


class PredCon(enum.Enum):
    DUP = "Dup"
    DROP = "Drop"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Pred:
    """An atomic class constraint: Dup t or Drop t."""

    con: PredCon
    arg: Type


ConstraintSet = frozenset  # of Pred


def pred_key(p: Pred) -> tuple:
    # Order by subject first so constraints on one variable group together
    # (Dup a, Drop a, Drop b), with Dup before Drop.
    return (type_key(p.arg), 0 if p.con is PredCon.DUP else 1)


def sorted_preds(preds: Iterable[Pred]) -> list[Pred]:
    return sorted(preds, key=pred_key)


@dataclass(frozen=True)
class Scheme:
    """A qualified type scheme: quantified variables, the constraints on
    them, and the body type.

    Constrained variables must be quantified here or free in the enclosing
    environment; `quantified` entries are distinct.
    """

    quantified: tuple[str, ...]
    constraints: ConstraintSet
    body: Type

    def free_type_vars(self) -> frozenset[str]:
        inner = free_type_vars(self.body)
        for p in self.constraints:
            inner |= free_type_vars(p.arg)
        return inner - frozenset(self.quantified)


def monomorphic(t: Type) -> Scheme:
    return Scheme((), frozenset(), t)


def _collect_order(t: Type, quantified: frozenset[str], order: list[str]) -> None:
    if isinstance(t, TVar):
        if t.name in quantified and t.name not in order:
            order.append(t.name)
    elif isinstance(t, TArrow):
        _collect_order(t.dom, quantified, order)
        _collect_order(t.cod, quantified, order)
    elif isinstance(t, (TProd, TSum)):
        _collect_order(t.left, quantified, order)
        _collect_order(t.right, quantified, order)
    elif isinstance(t, TRef):
        _collect_order(t.contents, quantified, order)


def _rename_type(t: Type, ren: Mapping[str, str]) -> Type:
    if isinstance(t, TVar):
        return TVar(ren.get(t.name, t.name))
    if isinstance(t, TArrow):
        return TArrow(_rename_type(t.dom, ren), _rename_type(t.cod, ren), t.qual)
    if isinstance(t, TProd):
        return TProd(_rename_type(t.left, ren), _rename_type(t.right, ren))
    if isinstance(t, TSum):
        return TSum(_rename_type(t.left, ren), _rename_type(t.right, ren))
    if isinstance(t, TRef):
        return TRef(t.qual, _rename_type(t.contents, ren))
    return t


def canonical_scheme(s: Scheme) -> tuple:
    """Canonical form invariant under renaming of quantified variables and
    reordering of the constraint set."""
    quantified = frozenset(s.quantified)
    order: list[str] = []
    _collect_order(s.body, quantified, order)
    for p in sorted_preds(s.constraints):
        _collect_order(p.arg, quantified, order)
    for name in s.quantified:  # quantified but unused anywhere
        if name not in order:
            order.append(name)
    ren = {name: f"${i}" for i, name in enumerate(order)}
    body = _rename_type(s.body, ren)
    preds = frozenset(Pred(p.con, _rename_type(p.arg, ren)) for p in s.constraints)
    return (len(order), preds, body)


def scheme_alpha_eq(s1: Scheme, s2: Scheme) -> bool:
    """True iff the schemes are identical up to renaming of quantified
    variables and reordering of constraints."""
    return canonical_scheme(s1) == canonical_scheme(s2)


# ---------------------------------------------------------------------------
# Variable multisets (contexts of the elaboration stage)


@dataclass(frozen=True)
class VarMultiset:
    """Finite multiset of variable names; zero counts are never stored."""

    entries: tuple[tuple[str, int], ...] = ()

    @staticmethod
    def of(counts: Mapping[str, int] | Iterable[str]) -> "VarMultiset":
        acc: dict[str, int] = {}
        if isinstance(counts, Mapping):
            items: Iterable[tuple[str, int]] = counts.items()
        else:
            items = ((name, 1) for name in counts)
        for name, k in items:
            if k < 0:
                raise ValueError(f"negative multiplicity for {name}")
            if k:
                acc[name] = acc.get(name, 0) + k
        return VarMultiset(tuple(sorted(acc.items())))

    def count(self, name: str) -> int:
        for n, k in self.entries:
            if n == name:
                return k
        return 0

    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.entries)

    def is_empty(self) -> bool:
        return not self.entries

    def total(self) -> int:
        return sum(k for _, k in self.entries)

    def __contains__(self, name: str) -> bool:
        return self.count(name) > 0

    def __iter__(self) -> Iterator[tuple[str, int]]:
        return iter(self.entries)

    def __add__(self, other: "VarMultiset") -> "VarMultiset":
        acc = dict(self.entries)
        for n, k in other.entries:
            acc[n] = acc.get(n, 0) + k
        return VarMultiset(tuple(sorted(acc.items())))

    def minus(self, other: "VarMultiset") -> "VarMultiset":
        """Multiset difference; raises ValueError on underflow."""
        acc = dict(self.entries)
        for n, k in other.entries:
            have = acc.get(n, 0)
            if have < k:
                raise ValueError(f"multiset underflow on {n}")
            if have == k:
                del acc[n]
            else:
                acc[n] = have - k
        return VarMultiset(tuple(sorted(acc.items())))

    def leq(self, other: "VarMultiset") -> bool:
        return all(other.count(n) >= k for n, k in self.entries)

    def add(self, name: str, k: int = 1) -> "VarMultiset":
        return self + VarMultiset(((name, k),))

    def remove_all(self, name: str) -> "VarMultiset":
        return VarMultiset(tuple((n, k) for n, k in self.entries if n != name))

    def __str__(self) -> str:
        parts = []
        for n, k in self.entries:
            parts.extend([n] * k)
        return "{" + ", ".join(parts) + "}"


EMPTY_MULTISET = VarMultiset()


# ---------------------------------------------------------------------------
# Terms

_SPAN = dict(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Var:
    name: str
    span: Span | None = field(**_SPAN)


@dataclass(frozen=True)
class Lam:
    qual: ArrowQual
    param: str
    body: "Term"
    span: Span | None = field(**_SPAN)


@dataclass(frozen=True)
class App:
    fn: "Term"
    arg: "Term"
    span: Span | None = field(**_SPAN)


@dataclass(frozen=True)
class Pair:
    fst: "Term"
    snd: "Term"
    span: Span | None = field(**_SPAN)


@dataclass(frozen=True)
class Let:
    name: str
    rhs: "Term"
    body: "Term"
    span: Span | None = field(**_SPAN)


@dataclass(frozen=True)
class LetPair:
    x1: str
    x2: str
    rhs: "Term"
    body: "Term"
    span: Span | None = field(**_SPAN)


@dataclass(frozen=True)
class Inl:
    value: "Term"
    span: Span | None = field(**_SPAN)


@dataclass(frozen=True)
class Inr:
    value: "Term"
    span: Span | None = field(**_SPAN)


@dataclass(frozen=True)
class Case:
    scrut: "Term"
    lvar: str
    lbody: "Term"
    rvar: str
    rbody: "Term"
    span: Span | None = field(**_SPAN)


@dataclass(frozen=True)
class UnitVal:
    span: Span | None = field(**_SPAN)


@dataclass(frozen=True)
class New:
    qual: RefQual
    value: "Term"
    span: Span | None = field(**_SPAN)


@dataclass(frozen=True)
class Release:
    qual: RefQual
    ref: "Term"
    span: Span | None = field(**_SPAN)


@dataclass(frozen=True)
class Swap:
    qual: RefQual
    ref: "Term"
    value: "Term"
    span: Span | None = field(**_SPAN)


# Annotated layer: dup/drop over multisets of in-scope variables.


@dataclass(frozen=True)
class DupCtx:
    vars: VarMultiset
    body: "Term"
    span: Span | None = field(**_SPAN)


@dataclass(frozen=True)
class DropCtx:
    vars: VarMultiset
    body: "Term"
    span: Span | None = field(**_SPAN)


# Internal layer: binary dup/drop binders and store locations.


@dataclass(frozen=True)
class DupBind:
    src: "Term"
    x1: str
    x2: str
    body: "Term"
    span: Span | None = field(**_SPAN)


@dataclass(frozen=True)
class DropBind:
    src: "Term"
    body: "Term"
    span: Span | None = field(**_SPAN)


@dataclass(frozen=True)
class Loc:
    loc: int
    span: Span | None = field(**_SPAN)


Term = Union[
    Var, Lam, App, Pair, Let, LetPair, Inl, Inr, Case, UnitVal,
    New, Release, Swap, DupCtx, DropCtx, DupBind, DropBind, Loc,
]

SURFACE_NODES = (
    Var, Lam, App, Pair, Let, LetPair, Inl, Inr, Case, UnitVal,
    New, Release, Swap,
)


def is_surface(t: Term) -> bool:
    """True iff t contains no dup/drop nodes and no location literals."""
    if isinstance(t, (DupCtx, DropCtx, DupBind, DropBind, Loc)):
        return False
    return all(is_surface(c) for c in children(t))


def children(t: Term) -> tuple[Term, ...]:
    if isinstance(t, (Var, UnitVal, Loc)):
        return ()
    if isinstance(t, Lam):
        return (t.body,)
    if isinstance(t, App):
        return (t.fn, t.arg)
    if isinstance(t, Pair):
        return (t.fst, t.snd)
    if isinstance(t, (Let, LetPair)):
        return (t.rhs, t.body)
    if isinstance(t, (Inl, Inr)):
        return (t.value,)
    if isinstance(t, Case):
        return (t.scrut, t.lbody, t.rbody)
    if isinstance(t, New):
        return (t.value,)
    if isinstance(t, Release):
        return (t.ref,)
    if isinstance(t, Swap):
        return (t.ref, t.value)
    if isinstance(t, (DupCtx, DropCtx)):
        return (t.body,)
    if isinstance(t, DupBind):
        return (t.src, t.body)
    if isinstance(t, DropBind):
        return (t.src, t.body)
    raise TypeError(f"not a term: {t!r}")


def term_size(t: Term) -> int:
    """Number of constructors, counting every node including leaves."""
    return 1 + sum(term_size(c) for c in children(t))


# ---------------------------------------------------------------------------
# Pretty-printing

_PREC_LOW = 0   # lambda, let, case, dup/drop binders: extend to the right
_PREC_APP = 1   # application and keyword-prefix forms
_PREC_ATOM = 2  # variables, unit, pairs, parenthesized


def pretty_type(t: Type, prec: int = 0) -> str:
    # prec levels for types: 0 arrow, 1 sum, 2 atom
    if isinstance(t, TVar):
        return t.name
    if isinstance(t, TUnit):
        return "()"
    if isinstance(t, TProd):
        return f"({pretty_type(t.left)}, {pretty_type(t.right)})"
    if isinstance(t, TRef):
        s = f"Ref_{t.qual.value} {pretty_type(t.contents, 2)}"
        return f"({s})" if prec > 1 else s
    if isinstance(t, TSum):
        # left-associative chain: left operand at sum level, right at atom level
        s = f"{pretty_type(t.left, 1)} + {pretty_type(t.right, 2)}"
        return f"({s})" if prec > 1 else s
    if isinstance(t, TArrow):
        s = f"{pretty_type(t.dom, 1)} -{t.qual.value}> {pretty_type(t.cod, 0)}"
        return f"({s})" if prec > 0 else s
    raise TypeError(f"not a type: {t!r}")


def pretty_pred(p: Pred) -> str:
    return f"{p.con.value} {pretty_type(p.arg, 2)}"


def pretty_constraints(preds: Iterable[Pred]) -> str:
    items = [pretty_pred(p) for p in sorted_preds(preds)]
    if len(items) == 1:
        return items[0]
    return "(" + ", ".join(items) + ")"


def pretty_scheme(s: Scheme) -> str:
    """Render in surface signature notation, quantifiers left implicit."""
    if s.constraints:
        return f"{pretty_constraints(s.constraints)} => {pretty_type(s.body)}"
    return pretty_type(s.body)


def _loc_name(loc: int) -> str:
    return f"ℓ{loc}"


def pretty_term(t: Term, prec: int = _PREC_LOW) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, UnitVal):
        return "()"
    if isinstance(t, Loc):
        return _loc_name(t.loc)
    if isinstance(t, Pair):
        return f"({pretty_term(t.fst)}, {pretty_term(t.snd)})"
    if isinstance(t, App):
        s = f"{pretty_term(t.fn, _PREC_APP)} {pretty_term(t.arg, _PREC_ATOM)}"
        return f"({s})" if prec > _PREC_APP else s
    if isinstance(t, Inl):
        s = f"inl {pretty_term(t.value, _PREC_ATOM)}"
        return f"({s})" if prec > _PREC_APP else s
    if isinstance(t, Inr):
        s = f"inr {pretty_term(t.value, _PREC_ATOM)}"
        return f"({s})" if prec > _PREC_APP else s
    if isinstance(t, New):
        s = f"new_{t.qual.value} {pretty_term(t.value, _PREC_ATOM)}"
        return f"({s})" if prec > _PREC_APP else s
    if isinstance(t, Release):
        s = f"release_{t.qual.value} {pretty_term(t.ref, _PREC_ATOM)}"
        return f"({s})" if prec > _PREC_APP else s
    if isinstance(t, Swap):
        s = (f"swap_{t.qual.value} {pretty_term(t.ref, _PREC_ATOM)}"
             f" {pretty_term(t.value, _PREC_ATOM)}")
        return f"({s})" if prec > _PREC_APP else s
    if isinstance(t, Lam):
        s = f"\\{t.param} -{t.qual.value}> {pretty_term(t.body)}"
        return f"({s})" if prec > _PREC_LOW else s
    if isinstance(t, Let):
        s = f"let {t.name} = {pretty_term(t.rhs)} in {pretty_term(t.body)}"
        return f"({s})" if prec > _PREC_LOW else s
    if isinstance(t, LetPair):
        s = (f"let ({t.x1}, {t.x2}) = {pretty_term(t.rhs)}"
             f" in {pretty_term(t.body)}")
        return f"({s})" if prec > _PREC_LOW else s
    if isinstance(t, Case):
        s = (f"case {pretty_term(t.scrut)} of"
             f" {{ inl {t.lvar} -> {pretty_term(t.lbody)}"
             f" ; inr {t.rvar} -> {pretty_term(t.rbody)} }}")
        return f"({s})" if prec > _PREC_LOW else s
    if isinstance(t, DupCtx):
        s = f"dup {t.vars} in {pretty_term(t.body)}"
        return f"({s})" if prec > _PREC_LOW else s
    if isinstance(t, DropCtx):
        s = f"drop {t.vars} in {pretty_term(t.body)}"
        return f"({s})" if prec > _PREC_LOW else s
    if isinstance(t, DupBind):
        s = (f"dup {pretty_term(t.src, _PREC_ATOM)} as {t.x1}, {t.x2}"
             f" in {pretty_term(t.body)}")
        return f"({s})" if prec > _PREC_LOW else s
    if isinstance(t, DropBind):
        s = f"drop {pretty_term(t.src, _PREC_ATOM)} in {pretty_term(t.body)}"
        return f"({s})" if prec > _PREC_LOW else s
    raise TypeError(f"not a term: {t!r}")


# ---------------------------------------------------------------------------
# Programs


@dataclass(frozen=True)
class Sig:
    name: str
    scheme: Scheme
    span: Span | None = field(**_SPAN)


@dataclass(frozen=True)
class Def:
    name: str
    body: Term
    span: Span | None = field(**_SPAN)


Decl = Union[Sig, Def]


@dataclass(frozen=True)
class Program:
    decls: tuple[Decl, ...]

    def signatures(self) -> dict[str, Scheme]:
        return {d.name: d.scheme for d in self.decls if isinstance(d, Sig)}

    def definitions(self) -> list[Def]:
        return [d for d in self.decls if isinstance(d, Def)]


def pretty_program(p: Program) -> str:
    lines = []
    for d in p.decls:
        if isinstance(d, Sig):
            lines.append(f"{d.name} :: {pretty_scheme(d.scheme)}")
        else:
            lines.append(f"{d.name} = {pretty_term(d.body)}")
    return "\n".join(lines) + ("\n" if lines else "")
