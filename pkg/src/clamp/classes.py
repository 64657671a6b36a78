"""The fixed Dup/Drop instance environment and constraint entailment.

The substructural content of the whole system lives in a dozen instance
rules: pairs and sums are duplicable/droppable when their components are;
arrows answer only to their qualifier (U both, R dup-only, A drop-only,
L neither); Unit supports both; weak references are freely aliasable but
a reference of either strength may be dropped only when its contents can
be dropped; strong references can never be duplicated.

There are no superclasses, so entailment is membership plus instance
recursion, and context reduction is head-normalization exactly in the
Haskell 98 style: constraints on constructed types decompose into
constraints on their parts, constraints on bare variables pass through,
and a constructed-head constraint with no matching instance is a
substructural violation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import ClampError, Span
from .syntax import (
    ArrowQual, Pred, PredCon, RefQual, TArrow, TProd, TRef, TSum, TUnit,
    TVar, Type, pretty_pred, sorted_preds,
)


class IrreduciblePredicate(ClampError):
    """A constructed-head constraint with no matching instance: the type
    cannot support the requested structural operation."""

    def __init__(self, pred: Pred, root: Pred | None = None,
                 span: Span | None = None, reason: str | None = None):
        root = root or pred
        msg = f"unsatisfiable predicate {pretty_pred(pred)}"
        if root != pred:
            msg += f" (required by {pretty_pred(root)})"
        if reason:
            msg += f" arising from {reason}"
        super().__init__(msg, span)
        self.pred = pred
        self.root = root
        self.reason = reason


@dataclass(frozen=True)
class InstanceRule:
    """premises => conclusion, where the conclusion's argument is a type
    pattern with a constructed head and the premises constrain only the
    pattern's variables."""

    premises: tuple[Pred, ...]
    conclusion: Pred


def _rule(premises: Iterable[Pred], con: PredCon, head: Type) -> InstanceRule:
    return InstanceRule(tuple(premises), Pred(con, head))


_A1, _A2 = TVar("a1"), TVar("a2")


def default_instance_env() -> "InstanceEnv":
    dup, drop = PredCon.DUP, PredCon.DROP
    rules = [
        _rule([Pred(dup, _A1), Pred(dup, _A2)], dup, TProd(_A1, _A2)),
        _rule([Pred(drop, _A1), Pred(drop, _A2)], drop, TProd(_A1, _A2)),
        _rule([Pred(dup, _A1), Pred(dup, _A2)], dup, TSum(_A1, _A2)),
        _rule([Pred(drop, _A1), Pred(drop, _A2)], drop, TSum(_A1, _A2)),
        _rule([], dup, TArrow(_A1, _A2, ArrowQual.U)),
        _rule([], drop, TArrow(_A1, _A2, ArrowQual.U)),
        _rule([], dup, TArrow(_A1, _A2, ArrowQual.R)),
        _rule([], drop, TArrow(_A1, _A2, ArrowQual.A)),
        _rule([], dup, TUnit()),
        _rule([], drop, TUnit()),
        _rule([], dup, TRef(RefQual.W, _A1)),
        # droppable contents requirement, one rule per reference strength
        _rule([Pred(drop, _A1)], drop, TRef(RefQual.S, _A1)),
        _rule([Pred(drop, _A1)], drop, TRef(RefQual.W, _A1)),
    ]
    return InstanceEnv(tuple(rules))


def _head_key(t: Type) -> tuple | None:
    """Dispatch key of a constructed type head; None for variables.
    Arrows count as four distinct heads, references as two."""
    if isinstance(t, TVar):
        return None
    if isinstance(t, TProd):
        return ("prod",)
    if isinstance(t, TSum):
        return ("sum",)
    if isinstance(t, TArrow):
        return ("arrow", t.qual.value)
    if isinstance(t, TUnit):
        return ("unit",)
    if isinstance(t, TRef):
        return ("ref", t.qual.value)
    raise TypeError(f"not a type: {t!r}")


def _match(pattern: Type, t: Type, binding: dict[str, Type]) -> bool:
    if isinstance(pattern, TVar):
        binding[pattern.name] = t
        return True
    if isinstance(pattern, TProd) and isinstance(t, TProd):
        return _match(pattern.left, t.left, binding) and _match(pattern.right, t.right, binding)
    if isinstance(pattern, TSum) and isinstance(t, TSum):
        return _match(pattern.left, t.left, binding) and _match(pattern.right, t.right, binding)
    if isinstance(pattern, TArrow) and isinstance(t, TArrow):
        return (pattern.qual is t.qual
                and _match(pattern.dom, t.dom, binding)
                and _match(pattern.cod, t.cod, binding))
    if isinstance(pattern, TRef) and isinstance(t, TRef):
        return pattern.qual is t.qual and _match(pattern.contents, t.contents, binding)
    if isinstance(pattern, TUnit) and isinstance(t, TUnit):
        return True
    return False


def _subst_pattern(t: Type, binding: dict[str, Type]) -> Type:
    if isinstance(t, TVar):
        return binding[t.name]
    if isinstance(t, TProd):
        return TProd(_subst_pattern(t.left, binding), _subst_pattern(t.right, binding))
    if isinstance(t, TSum):
        return TSum(_subst_pattern(t.left, binding), _subst_pattern(t.right, binding))
    if isinstance(t, TArrow):
        return TArrow(_subst_pattern(t.dom, binding), _subst_pattern(t.cod, binding), t.qual)
    if isinstance(t, TRef):
        return TRef(t.qual, _subst_pattern(t.contents, binding))
    return t


class InstanceEnv:
    """Immutable table of instance rules, at most one per
    (predicate constructor, head constructor) pair."""

    def __init__(self, rules: tuple[InstanceRule, ...]):
        self.rules = rules
        self._by_head: dict[tuple, InstanceRule] = {}
        for r in rules:
            key = (r.conclusion.con, _head_key(r.conclusion.arg))
            if key in self._by_head:
                raise ValueError(f"overlapping instances for {key}")
            self._by_head[key] = r

    def lookup(self, con: PredCon, t: Type) -> InstanceRule | None:
        head = _head_key(t)
        if head is None:
            return None
        return self._by_head.get((con, head))

    def by_instance(self, goal: Pred) -> list[Pred] | None:
        """Instantiated premises of the matching rule, or None when the
        goal's head is a variable or has no instance."""
        rule = self.lookup(goal.con, goal.arg)
        if rule is None:
            return None
        binding: dict[str, Type] = {}
        matched = _match(rule.conclusion.arg, goal.arg, binding)
        assert matched, "head dispatch and pattern disagree"
        return [Pred(p.con, _subst_pattern(p.arg, binding)) for p in rule.premises]


DEFAULT_INSTANCES = default_instance_env()


def entails(given: frozenset[Pred] | Iterable[Pred], goal: Pred,
            env: InstanceEnv = DEFAULT_INSTANCES) -> bool:
    """given ||- goal: membership, or a matching instance whose
    instantiated premises are all entailed.  Variable-headed goals are
    entailed only by membership."""
    given = frozenset(given)
    if goal in given:
        return True
    premises = env.by_instance(goal)
    if premises is None:
        return False
    return all(entails(given, p, env) for p in premises)


def entails_all(given: frozenset[Pred] | Iterable[Pred],
                goals: Iterable[Pred],
                env: InstanceEnv = DEFAULT_INSTANCES) -> bool:
    given = frozenset(given)
    return all(entails(given, g, env) for g in goals)


def to_hnf(pred: Pred, env: InstanceEnv = DEFAULT_INSTANCES,
           root: Pred | None = None, span: Span | None = None,
           reason: str | None = None) -> list[Pred]:
    """Head-normalize one predicate: variable heads pass through, and
    constructed heads are replaced by their instance premises,
    recursively.  Raises IrreduciblePredicate when no instance matches."""
    root = root or pred
    if isinstance(pred.arg, TVar):
        return [pred]
    premises = env.by_instance(pred)
    if premises is None:
        raise IrreduciblePredicate(pred, root, span, reason)
    out: list[Pred] = []
    for p in premises:
        out.extend(to_hnf(p, env, root, span, reason))
    return out


def reduce_context(preds: Iterable[Pred],
                   env: InstanceEnv = DEFAULT_INSTANCES) -> frozenset[Pred]:
    """Head-normal residue of a constraint set, duplicates removed."""
    out: set[Pred] = set()
    for p in sorted_preds(preds):
        out.update(to_hnf(p, env))
    return frozenset(out)


def constrain_env(qual: ArrowQual, types: Iterable[Type]) -> frozenset[Pred]:
    """Closure-environment constraints for a lambda of the given
    qualifier: everything the closure captures must support whatever
    structural operations the closure itself supports."""
    types = list(types)
    out: set[Pred] = set()
    if qual in (ArrowQual.U, ArrowQual.R):
        out.update(Pred(PredCon.DUP, t) for t in types)
    if qual in (ArrowQual.U, ArrowQual.A):
        out.update(Pred(PredCon.DROP, t) for t in types)
    return frozenset(out)
