"""Call-by-value small-step execution over a reference-counted store.

Values are closed terms (unit, locations, lambdas, and pairs/injections
of values); beta reduction substitutes values into bodies textually,
which keeps `locs` a plain structural sum exactly as the reference-count
bookkeeping wants it.  A cell records its strength, its count, and its
contents; weak release only surrenders the contents at the last alias,
strong release requires count one.

Checked mode re-types every configuration it passes through: each stored
value and the term under evaluation are typed against a store typing
reconstructed from the heap, the term's type must stay an instance of the
program's type, and the reference counts must equal the number of
occurrences of each location in the term plus the stored values.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ClampError
from . import classes as C
from . import infer as I
from . import syntax as S
from .syntax import (
    App, Case, DropBind, DupBind, Inl, Inr, Lam, Let, LetPair, Loc, New,
    Pair, RefQual, Release, Swap, Term, Type, UnitVal, Var,
)


class EvalError(ClampError):
    pass


class MissingLocation(EvalError):
    pass


class StuckError(EvalError):
    def __init__(self, reason: str, redex: Term | None = None):
        msg = f"stuck: {reason}"
        if redex is not None:
            msg += f" (at {S.pretty_term(redex)})"
        super().__init__(msg)
        self.reason = reason
        self.redex = redex


class StepLimitExceeded(EvalError):
    pass


class CheckViolation(EvalError):
    pass


class BranchLocsMismatch(CheckViolation):
    pass


class IllTypedStoreValue(CheckViolation):
    pass


class PreservationViolation(CheckViolation):
    pass


class CountInvariantViolation(CheckViolation):
    pass


# ---------------------------------------------------------------------------
# Values, stores, configurations


def is_value(t: Term) -> bool:
    if isinstance(t, (UnitVal, Loc, Lam)):
        return True
    if isinstance(t, Pair):
        return is_value(t.fst) and is_value(t.snd)
    if isinstance(t, (Inl, Inr)):
        return is_value(t.value)
    return False


@dataclass(frozen=True)
class Cell:
    qual: RefQual
    count: int
    value: Term


class Store:
    """Finite map from locations to cells; treated immutably, every update
    returns a new store.  Locations are never reused within a run."""

    __slots__ = ("cells", "next_loc")

    def __init__(self, cells: dict[int, Cell] | None = None, next_loc: int = 0):
        self.cells = cells or {}
        self.next_loc = next_loc

    def get(self, loc: int) -> Cell | None:
        return self.cells.get(loc)

    def alloc(self, qual: RefQual, value: Term) -> tuple["Store", int]:
        loc = self.next_loc
        cells = dict(self.cells)
        cells[loc] = Cell(qual, 1, value)
        return Store(cells, loc + 1), loc

    def with_cell(self, loc: int, cell: Cell) -> "Store":
        cells = dict(self.cells)
        cells[loc] = cell
        return Store(cells, self.next_loc)

    def without(self, loc: int) -> "Store":
        cells = dict(self.cells)
        del cells[loc]
        return Store(cells, self.next_loc)

    def items(self) -> list[tuple[int, Cell]]:
        return sorted(self.cells.items())

    def __len__(self) -> int:
        return len(self.cells)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Store) and self.cells == other.cells

    def __repr__(self) -> str:
        return f"Store({self.cells!r})"

    def pretty(self) -> str:
        parts = [f"ℓ{loc}↦{cell.count} {S.pretty_term(cell.value, 2)}"
                 for loc, cell in self.items()]
        return "{" + ", ".join(parts) + "}"


EMPTY_STORE = Store()


@dataclass(frozen=True)
class Config:
    store: Store
    term: Term

    def pretty(self) -> str:
        return f"⟨{self.store.pretty()}, {S.pretty_term(self.term)}⟩"


# ---------------------------------------------------------------------------
# Location multisets and reference-count management


def locs(t: Term, checked: bool = False) -> dict[int, int]:
    """Multiset of locations a term or value uses.  A case contributes its
    scrutinee plus the first branch only; with `checked`, branches are
    asserted to agree."""
    if isinstance(t, Loc):
        return {t.loc: 1}
    if isinstance(t, Case):
        out = locs(t.scrut, checked)
        left = locs(t.lbody, checked)
        if checked:
            right = locs(t.rbody, checked)
            if left != right:
                raise BranchLocsMismatch(
                    f"case branches use different locations: {left} vs {right}",
                    t.span)
        _add_locs(out, left)
        return out
    out: dict[int, int] = {}
    for c in S.children(t):
        _add_locs(out, locs(c, checked))
    return out


def _add_locs(acc: dict[int, int], more: dict[int, int]) -> None:
    for loc, k in more.items():
        acc[loc] = acc.get(loc, 0) + k


def incr(ls: dict[int, int], store: Store) -> Store:
    cells = dict(store.cells)
    for loc in sorted(ls):
        cell = cells.get(loc)
        if cell is None:
            raise MissingLocation(f"increment of absent location ℓ{loc}")
        cells[loc] = Cell(cell.qual, cell.count + ls[loc], cell.value)
    return Store(cells, store.next_loc)


def decr(ls: dict[int, int], store: Store) -> Store:
    """Decrement counts; a count reaching zero removes the cell and
    recursively decrements everything its contents pointed to."""
    for loc in sorted(ls):
        for _ in range(ls[loc]):
            store = _decr_one(loc, store)
    return store


def _decr_one(loc: int, store: Store) -> Store:
    cell = store.get(loc)
    if cell is None:
        raise MissingLocation(f"decrement of absent location ℓ{loc}")
    if cell.count > 1:
        return store.with_cell(loc, Cell(cell.qual, cell.count - 1, cell.value))
    return decr(locs(cell.value), store.without(loc))


# ---------------------------------------------------------------------------
# Substitution (values being substituted are closed)


def substitute(t: Term, name: str, value: Term) -> Term:
    if isinstance(t, Var):
        return value if t.name == name else t
    if isinstance(t, (UnitVal, Loc)):
        return t
    if isinstance(t, Lam):
        if t.param == name:
            return t
        return Lam(t.qual, t.param, substitute(t.body, name, value), t.span)
    if isinstance(t, App):
        return App(substitute(t.fn, name, value),
                   substitute(t.arg, name, value), t.span)
    if isinstance(t, Pair):
        return Pair(substitute(t.fst, name, value),
                    substitute(t.snd, name, value), t.span)
    if isinstance(t, Let):
        rhs = substitute(t.rhs, name, value)
        body = t.body if t.name == name else substitute(t.body, name, value)
        return Let(t.name, rhs, body, t.span)
    if isinstance(t, LetPair):
        rhs = substitute(t.rhs, name, value)
        body = t.body if name in (t.x1, t.x2) else substitute(t.body, name, value)
        return LetPair(t.x1, t.x2, rhs, body, t.span)
    if isinstance(t, Inl):
        return Inl(substitute(t.value, name, value), t.span)
    if isinstance(t, Inr):
        return Inr(substitute(t.value, name, value), t.span)
    if isinstance(t, Case):
        scrut = substitute(t.scrut, name, value)
        lbody = t.lbody if t.lvar == name else substitute(t.lbody, name, value)
        rbody = t.rbody if t.rvar == name else substitute(t.rbody, name, value)
        return Case(scrut, t.lvar, lbody, t.rvar, rbody, t.span)
    if isinstance(t, New):
        return New(t.qual, substitute(t.value, name, value), t.span)
    if isinstance(t, Release):
        return Release(t.qual, substitute(t.ref, name, value), t.span)
    if isinstance(t, Swap):
        return Swap(t.qual, substitute(t.ref, name, value),
                    substitute(t.value, name, value), t.span)
    if isinstance(t, DupBind):
        src = substitute(t.src, name, value)
        body = t.body if name in (t.x1, t.x2) else substitute(t.body, name, value)
        return DupBind(src, t.x1, t.x2, body, t.span)
    if isinstance(t, DropBind):
        return DropBind(substitute(t.src, name, value),
                        substitute(t.body, name, value), t.span)
    raise TypeError(f"cannot substitute into {type(t).__name__}")


# ---------------------------------------------------------------------------
# The small-step relation


@dataclass(frozen=True)
class Next:
    config: Config


@dataclass(frozen=True)
class Done:
    value: Term
    store: Store


@dataclass(frozen=True)
class Stuck:
    reason: str
    redex: Term | None = None


class _StuckEx(Exception):
    def __init__(self, reason: str, redex: Term):
        self.reason = reason
        self.redex = redex


def step(config: Config) -> Next | Done | Stuck:
    """One step of the small-step relation, or Done on a value
    configuration, or Stuck with the offending redex."""
    if is_value(config.term):
        return Done(config.term, config.store)
    try:
        term, store = _reduce(config.term, config.store)
    except _StuckEx as exc:
        return Stuck(exc.reason, exc.redex)
    return Next(Config(store, term))


def _reduce(t: Term, store: Store) -> tuple[Term, Store]:
    # congruence: evaluate the leftmost non-value position of each form
    if isinstance(t, App):
        if not is_value(t.fn):
            fn, store = _reduce(t.fn, store)
            return App(fn, t.arg, t.span), store
        if not is_value(t.arg):
            arg, store = _reduce(t.arg, store)
            return App(t.fn, arg, t.span), store
        if isinstance(t.fn, Lam):
            return substitute(t.fn.body, t.fn.param, t.arg), store
        raise _StuckEx("application of a non-function value", t)
    if isinstance(t, Pair):
        if not is_value(t.fst):
            fst, store = _reduce(t.fst, store)
            return Pair(fst, t.snd, t.span), store
        snd, store = _reduce(t.snd, store)
        return Pair(t.fst, snd, t.span), store
    if isinstance(t, Inl):
        value, store = _reduce(t.value, store)
        return Inl(value, t.span), store
    if isinstance(t, Inr):
        value, store = _reduce(t.value, store)
        return Inr(value, t.span), store
    if isinstance(t, Let):
        if not is_value(t.rhs):
            rhs, store = _reduce(t.rhs, store)
            return Let(t.name, rhs, t.body, t.span), store
        return substitute(t.body, t.name, t.rhs), store
    if isinstance(t, LetPair):
        if not is_value(t.rhs):
            rhs, store = _reduce(t.rhs, store)
            return LetPair(t.x1, t.x2, rhs, t.body, t.span), store
        if isinstance(t.rhs, Pair):
            body = substitute(t.body, t.x1, t.rhs.fst)
            return substitute(body, t.x2, t.rhs.snd), store
        raise _StuckEx("pair destructuring of a non-pair value", t)
    if isinstance(t, Case):
        if not is_value(t.scrut):
            scrut, store = _reduce(t.scrut, store)
            return Case(scrut, t.lvar, t.lbody, t.rvar, t.rbody, t.span), store
        if isinstance(t.scrut, Inl):
            return substitute(t.lbody, t.lvar, t.scrut.value), store
        if isinstance(t.scrut, Inr):
            return substitute(t.rbody, t.rvar, t.scrut.value), store
        raise _StuckEx("case on a non-injection value", t)
    if isinstance(t, New):
        if not is_value(t.value):
            value, store = _reduce(t.value, store)
            return New(t.qual, value, t.span), store
        store, loc = store.alloc(t.qual, t.value)
        return Loc(loc, t.span), store
    if isinstance(t, Release):
        if not is_value(t.ref):
            ref, store = _reduce(t.ref, store)
            return Release(t.qual, ref, t.span), store
        if not isinstance(t.ref, Loc):
            raise _StuckEx("release of a non-location value", t)
        cell = store.get(t.ref.loc)
        if cell is None:
            raise _StuckEx("release of a dangling location", t)
        if t.qual is RefQual.S:
            if cell.count != 1:
                raise _StuckEx("strong release of an aliased cell", t)
            return cell.value, store.without(t.ref.loc)
        if cell.count == 1:
            # last alias: the cell dies and the contents come back
            return Inr(cell.value, t.span), store.without(t.ref.loc)
        store = store.with_cell(t.ref.loc,
                                Cell(cell.qual, cell.count - 1, cell.value))
        return Inl(UnitVal(t.span), t.span), store
    if isinstance(t, Swap):
        if not is_value(t.ref):
            ref, store = _reduce(t.ref, store)
            return Swap(t.qual, ref, t.value, t.span), store
        if not is_value(t.value):
            value, store = _reduce(t.value, store)
            return Swap(t.qual, t.ref, value, t.span), store
        if not isinstance(t.ref, Loc):
            raise _StuckEx("swap on a non-location value", t)
        cell = store.get(t.ref.loc)
        if cell is None:
            raise _StuckEx("swap on a dangling location", t)
        store = store.with_cell(t.ref.loc, Cell(cell.qual, cell.count, t.value))
        return Pair(Loc(t.ref.loc, t.span), cell.value, t.span), store
    if isinstance(t, DupBind):
        if not is_value(t.src):
            src, store = _reduce(t.src, store)
            return DupBind(src, t.x1, t.x2, t.body, t.span), store
        store = incr(locs(t.src), store)
        body = substitute(t.body, t.x1, t.src)
        return substitute(body, t.x2, t.src), store
    if isinstance(t, DropBind):
        if not is_value(t.src):
            src, store = _reduce(t.src, store)
            return DropBind(src, t.body, t.span), store
        return t.body, decr(locs(t.src), store)
    if isinstance(t, Var):
        raise _StuckEx(f"unbound variable {t.name!r} at runtime", t)
    raise TypeError(f"cannot step a {type(t).__name__}")


# ---------------------------------------------------------------------------
# Driving the machine


@dataclass
class RunResult:
    value: Term
    store: Store
    steps: int
    trace: list[str]


def run(term: Term, *, step_limit: int = 100_000, checked: Type | None = None,
        trace: bool = False,
        instances: C.InstanceEnv = C.DEFAULT_INSTANCES) -> RunResult:
    """Iterate the step relation to a value configuration.

    With `checked` set to the program's (monomorphic) type, every
    configuration passed through is re-typed and the count invariant is
    asserted before each step and on the final state.
    """
    config = Config(EMPTY_STORE, term)
    lines: list[str] = []
    steps = 0
    while True:
        if checked is not None:
            check_config(config, checked, step_index=steps, instances=instances)
        if trace:
            lines.append(config.pretty())
        if is_value(config.term):
            return RunResult(config.term, config.store, steps, lines)
        if steps >= step_limit:
            raise StepLimitExceeded(f"no value after {step_limit} steps")
        result = step(config)
        if isinstance(result, Stuck):
            raise StuckError(result.reason, result.redex)
        assert isinstance(result, Next)
        config = result.config
        steps += 1


# ---------------------------------------------------------------------------
# Configuration checking (preservation + count invariant)


def _store_topo_order(store: Store) -> list[int]:
    """Locations ordered so that every location a cell's contents mention
    comes earlier; rejects cyclic stores."""
    order: list[int] = []
    state: dict[int, int] = {}  # 0 in progress, 1 done

    def visit(loc: int, origin: int) -> None:
        mark = state.get(loc)
        if mark == 1:
            return
        if mark == 0:
            raise IllTypedStoreValue(
                f"store contains a location cycle through ℓ{loc}")
        state[loc] = 0
        cell = store.get(loc)
        if cell is None:
            raise MissingLocation(
                f"ℓ{origin} points at absent location ℓ{loc}")
        for dep in sorted(locs(cell.value)):
            visit(dep, loc)
        state[loc] = 1
        order.append(loc)

    for loc, _ in store.items():
        visit(loc, loc)
    return order


def _match_instance(general: Type, specific: Type, binding: dict[str, Type],
                    subst: I.Subst) -> bool:
    general = I.walk(general, subst)
    if isinstance(general, S.TVar):
        bound = binding.get(general.name)
        if bound is not None:
            return bound == specific
        binding[general.name] = specific
        return True
    if isinstance(general, S.TArrow) and isinstance(specific, S.TArrow):
        return (general.qual is specific.qual
                and _match_instance(general.dom, specific.dom, binding, subst)
                and _match_instance(general.cod, specific.cod, binding, subst))
    if isinstance(general, S.TProd) and isinstance(specific, S.TProd):
        return (_match_instance(general.left, specific.left, binding, subst)
                and _match_instance(general.right, specific.right, binding, subst))
    if isinstance(general, S.TSum) and isinstance(specific, S.TSum):
        return (_match_instance(general.left, specific.left, binding, subst)
                and _match_instance(general.right, specific.right, binding, subst))
    if isinstance(general, S.TRef) and isinstance(specific, S.TRef):
        return (general.qual is specific.qual
                and _match_instance(general.contents, specific.contents,
                                    binding, subst))
    return type(general) is type(specific) and isinstance(general, S.TUnit)


def check_config(config: Config, expected: Type, *, step_index: int = 0,
                 instances: C.InstanceEnv = C.DEFAULT_INSTANCES) -> None:
    """Assert that a configuration is well typed at `expected` and that
    every reference count matches the number of uses.

    Raises a CheckViolation subclass on the first failure; returns None
    when the configuration is fine.
    """
    # location bookkeeping is only meaningful when branches agree
    store = config.store
    demand = locs(config.term, checked=True)
    for _, cell in store.items():
        _add_locs(demand, locs(cell.value, checked=True))
    sigma: dict[int, tuple[RefQual, Type]] = {}
    inf = I.Inference(store_typing=sigma, instances=instances)

    for loc in _store_topo_order(store):
        cell = store.get(loc)
        try:
            ty = inf.infer(cell.value, {})
        except ClampError as exc:
            raise IllTypedStoreValue(
                f"stored value at ℓ{loc} is ill-typed: {exc.message}") from exc
        sigma[loc] = (cell.qual, ty)
    try:
        term_ty = inf.infer(config.term, {})
        reduced = inf._reduced_constraints()
    except ClampError as exc:
        if isinstance(exc, CheckViolation):
            raise
        raise PreservationViolation(
            f"step {step_index}: configuration term is ill-typed: "
            f"{exc.message}") from exc

    general = I.apply_subst(inf.subst, term_ty)
    binding: dict[str, Type] = {}
    if not _match_instance(general, expected, binding, inf.subst):
        raise PreservationViolation(
            f"step {step_index}: expected type {S.pretty_type(expected)}, "
            f"got {S.pretty_type(general)}")

    # residual constraints: instantiate matched variables, default the rest
    # to Unit (both classes hold at Unit), and require full discharge
    for pred, origin in reduced:
        arg = I.apply_subst(inf.subst, pred.arg)
        arg = I.subst_type_vars(arg, binding)
        leftover = {name: S.TUnit() for name in S.free_type_vars(arg)}
        arg = I.subst_type_vars(arg, leftover)
        try:
            rest = C.to_hnf(S.Pred(pred.con, arg), instances)
        except C.IrreduciblePredicate as exc:
            raise PreservationViolation(
                f"step {step_index}: runtime constraint "
                f"{S.pretty_pred(exc.pred)} (from {origin.reason}) is "
                f"unsatisfiable") from exc
        if rest:
            raise PreservationViolation(
                f"step {step_index}: runtime constraint "
                f"{S.pretty_pred(rest[0])} left undischarged")

    # count invariant
    for loc, cell in store.items():
        need = demand.get(loc, 0)
        if cell.qual is RefQual.S and (cell.count != 1 or need != 1):
            raise CountInvariantViolation(
                f"step {step_index}: strong ℓ{loc} has count "
                f"{cell.count} and {need} uses (both must be 1)")
        if cell.qual is RefQual.W and cell.count != need:
            raise CountInvariantViolation(
                f"step {step_index}: weak ℓ{loc} has count {cell.count} "
                f"but {need} uses")
    for loc in demand:
        if store.get(loc) is None:
            raise CountInvariantViolation(
                f"step {step_index}: ℓ{loc} is used {demand[loc]} times "
                f"but absent from the store")
