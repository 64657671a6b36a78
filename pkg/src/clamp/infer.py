"""Damas-Hindley-Milner inference over the explicitly linear core.

Because elaboration already made every duplication and discard explicit,
inference needs no usage counting or context splitting: dup/drop binders
emit Dup/Drop constraints on their subject, lambdas emit closure
constraints on everything they capture (scaled by the arrow qualifier),
and everything else is textbook algorithm W with type classes.

Constraints carry their origin (span plus a human description) so that an
unsatisfiable predicate can be traced to the dup, drop, or lambda that
introduced it.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ClampError, Span
from . import classes as C
from . import elaborate as E
from . import syntax as S
from .syntax import (
    App, ArrowQual, Case, DropBind, DupBind, Inl, Inr, Lam, Let, LetPair,
    Loc, New, Pair, Pred, PredCon, Program, RefQual, Release, Scheme, Swap,
    TArrow, TProd, TRef, TSum, TUnit, TVar, Term, Type, UnitVal, Var,
    VarMultiset, monomorphic,
)


class UnificationError(ClampError):
    pass


class ConstructorMismatch(UnificationError):
    pass


class QualifierMismatch(UnificationError):
    pass


class OccursCheck(UnificationError):
    pass


class UnboundVariable(ClampError):
    pass


class UnboundLocation(ClampError):
    pass


class AmbiguousScheme(ClampError):
    pass


class SignatureMismatch(ClampError):
    pass


class TopLevelNotUnlimited(ClampError):
    """A top-level binding whose type cannot be both duplicated and
    dropped; every occurrence of a top-level name counts as a fresh
    reference, so its type must be unlimited."""


Subst = dict  # type-variable name -> Type


def walk(t: Type, s: Subst) -> Type:
    while isinstance(t, TVar) and t.name in s:
        t = s[t.name]
    return t


def apply_subst(s: Subst, t: Type) -> Type:
    t = walk(t, s)
    if isinstance(t, TArrow):
        return TArrow(apply_subst(s, t.dom), apply_subst(s, t.cod), t.qual)
    if isinstance(t, TProd):
        return TProd(apply_subst(s, t.left), apply_subst(s, t.right))
    if isinstance(t, TSum):
        return TSum(apply_subst(s, t.left), apply_subst(s, t.right))
    if isinstance(t, TRef):
        return TRef(t.qual, apply_subst(s, t.contents))
    return t


def _occurs(name: str, t: Type, s: Subst) -> bool:
    t = walk(t, s)
    if isinstance(t, TVar):
        return t.name == name
    if isinstance(t, TArrow):
        return _occurs(name, t.dom, s) or _occurs(name, t.cod, s)
    if isinstance(t, (TProd, TSum)):
        return _occurs(name, t.left, s) or _occurs(name, t.right, s)
    if isinstance(t, TRef):
        return _occurs(name, t.contents, s)
    return False


def _unify(t1: Type, t2: Type, s: Subst, span: Span | None) -> None:
    t1 = walk(t1, s)
    t2 = walk(t2, s)
    if isinstance(t1, TVar) and isinstance(t2, TVar) and t1.name == t2.name:
        return
    if isinstance(t1, TVar):
        if _occurs(t1.name, t2, s):
            raise OccursCheck(
                f"cannot construct the infinite type {t1.name} = "
                f"{S.pretty_type(apply_subst(s, t2))}", span)
        s[t1.name] = t2
        return
    if isinstance(t2, TVar):
        _unify(t2, t1, s, span)
        return
    if isinstance(t1, TUnit) and isinstance(t2, TUnit):
        return
    if isinstance(t1, TArrow) and isinstance(t2, TArrow):
        if t1.qual is not t2.qual:
            raise QualifierMismatch(
                f"arrow qualifier mismatch: -{t1.qual}> vs -{t2.qual}>", span)
        _unify(t1.dom, t2.dom, s, span)
        _unify(t1.cod, t2.cod, s, span)
        return
    if isinstance(t1, TProd) and isinstance(t2, TProd):
        _unify(t1.left, t2.left, s, span)
        _unify(t1.right, t2.right, s, span)
        return
    if isinstance(t1, TSum) and isinstance(t2, TSum):
        _unify(t1.left, t2.left, s, span)
        _unify(t1.right, t2.right, s, span)
        return
    if isinstance(t1, TRef) and isinstance(t2, TRef):
        if t1.qual is not t2.qual:
            raise QualifierMismatch(
                f"reference strength mismatch: Ref_{t1.qual} vs Ref_{t2.qual}",
                span)
        _unify(t1.contents, t2.contents, s, span)
        return
    raise ConstructorMismatch(
        f"cannot unify {S.pretty_type(apply_subst(s, t1))}"
        f" with {S.pretty_type(apply_subst(s, t2))}", span)


def unify(t1: Type, t2: Type, subst: Subst | None = None,
          span: Span | None = None) -> Subst:
    """Most general unifier, extending `subst` when given.  Arrows unify
    only at equal qualifiers and references only at equal strengths."""
    s = dict(subst) if subst else {}
    _unify(t1, t2, s, span)
    return s


def subst_type_vars(t: Type, mapping: dict[str, Type]) -> Type:
    if isinstance(t, TVar):
        return mapping.get(t.name, t)
    if isinstance(t, TArrow):
        return TArrow(subst_type_vars(t.dom, mapping),
                      subst_type_vars(t.cod, mapping), t.qual)
    if isinstance(t, TProd):
        return TProd(subst_type_vars(t.left, mapping),
                     subst_type_vars(t.right, mapping))
    if isinstance(t, TSum):
        return TSum(subst_type_vars(t.left, mapping),
                    subst_type_vars(t.right, mapping))
    if isinstance(t, TRef):
        return TRef(t.qual, subst_type_vars(t.contents, mapping))
    return t


def is_syntactic_value(t: Term) -> bool:
    if isinstance(t, (Var, Lam, UnitVal, Loc)):
        return True
    if isinstance(t, Pair):
        return is_syntactic_value(t.fst) and is_syntactic_value(t.snd)
    if isinstance(t, (Inl, Inr)):
        return is_syntactic_value(t.value)
    return False


def _term_locs_set(t: Term) -> frozenset[int]:
    if isinstance(t, Loc):
        return frozenset((t.loc,))
    out: frozenset[int] = frozenset()
    for c in S.children(t):
        out |= _term_locs_set(c)
    return out


@dataclass(frozen=True)
class Origin:
    span: Span | None
    reason: str


TypeEnv = dict  # term variable or top-level name -> Scheme


class Inference:
    """One inference run: a substitution, a fresh-variable counter, and
    the constraints accumulated so far (kept under the substitution when
    read)."""

    def __init__(self, *, toplevel: frozenset[str] = frozenset(),
                 store_typing: dict[int, tuple[RefQual, Type]] | None = None,
                 instances: C.InstanceEnv = C.DEFAULT_INSTANCES):
        self.subst: Subst = {}
        self.counter = 0
        self.constraints: list[tuple[Pred, Origin]] = []
        self.toplevel = toplevel
        self.store_typing = store_typing or {}
        self.instances = instances

    def fresh(self) -> TVar:
        self.counter += 1
        return TVar(f"%{self.counter}")

    def emit(self, pred: Pred, span: Span | None, reason: str) -> None:
        self.constraints.append((pred, Origin(span, reason)))

    def unify(self, t1: Type, t2: Type, span: Span | None) -> None:
        _unify(t1, t2, self.subst, span)

    def instantiate(self, scheme: Scheme, span: Span | None,
                    reason: str) -> Type:
        mapping = {q: self.fresh() for q in scheme.quantified}
        for p in S.sorted_preds(scheme.constraints):
            self.emit(Pred(p.con, subst_type_vars(p.arg, mapping)), span, reason)
        return subst_type_vars(scheme.body, mapping)

    def _instance_type(self, scheme: Scheme) -> Type:
        # type-only instantiation: used when constraining captured values,
        # where the capture itself is not a use of the variable
        mapping = {q: self.fresh() for q in scheme.quantified}
        return subst_type_vars(scheme.body, mapping)

    # -- the term traversal

    def infer(self, t: Term, env: TypeEnv) -> Type:
        if isinstance(t, Var):
            scheme = env.get(t.name)
            if scheme is None:
                raise UnboundVariable(f"unbound variable {t.name!r}", t.span)
            return self.instantiate(scheme, t.span, f"use of {t.name!r}")
        if isinstance(t, Loc):
            entry = self.store_typing.get(t.loc)
            if entry is None:
                raise UnboundLocation(f"location ℓ{t.loc} has no store typing",
                                      t.span)
            rq, ty = entry
            return TRef(rq, ty)
        if isinstance(t, UnitVal):
            return TUnit()
        if isinstance(t, Lam):
            return self._infer_lam(t, env)
        if isinstance(t, App):
            fn_ty = self.infer(t.fn, env)
            arg_ty = self.infer(t.arg, env)
            fn_ty = walk(fn_ty, self.subst)
            if isinstance(fn_ty, TArrow):
                self.unify(fn_ty.dom, arg_ty, t.span)
                return fn_ty.cod
            # no qualifier polymorphism: an undetermined callee commits to U
            res = self.fresh()
            self.unify(fn_ty, TArrow(arg_ty, res, ArrowQual.U), t.span)
            return res
        if isinstance(t, Pair):
            return TProd(self.infer(t.fst, env), self.infer(t.snd, env))
        if isinstance(t, Let):
            rhs_ty = self.infer(t.rhs, env)
            if is_syntactic_value(t.rhs):
                scheme = self._generalize_local(rhs_ty, env)
            else:
                # value restriction: computed bindings stay monomorphic
                scheme = monomorphic(rhs_ty)
            env2 = dict(env)
            env2[t.name] = scheme
            return self.infer(t.body, env2)
        if isinstance(t, LetPair):
            rhs_ty = self.infer(t.rhs, env)
            a, b = self.fresh(), self.fresh()
            self.unify(rhs_ty, TProd(a, b), t.span)
            env2 = dict(env)
            env2[t.x1] = monomorphic(a)
            env2[t.x2] = monomorphic(b)
            return self.infer(t.body, env2)
        if isinstance(t, Inl):
            return TSum(self.infer(t.value, env), self.fresh())
        if isinstance(t, Inr):
            return TSum(self.fresh(), self.infer(t.value, env))
        if isinstance(t, Case):
            scrut_ty = self.infer(t.scrut, env)
            a, b = self.fresh(), self.fresh()
            self.unify(scrut_ty, TSum(a, b), t.span)
            env_l = dict(env)
            env_l[t.lvar] = monomorphic(a)
            l_ty = self.infer(t.lbody, env_l)
            env_r = dict(env)
            env_r[t.rvar] = monomorphic(b)
            r_ty = self.infer(t.rbody, env_r)
            self.unify(l_ty, r_ty, t.span)
            return l_ty
        if isinstance(t, New):
            return TRef(t.qual, self.infer(t.value, env))
        if isinstance(t, Release):
            ref_ty = walk(self.infer(t.ref, env), self.subst)
            if t.qual is RefQual.S:
                a = self.fresh()
                self.unify(ref_ty, TRef(RefQual.S, a), t.span)
                return a
            # the weak form deallocates references of either strength; an
            # undetermined operand commits to weak
            if not isinstance(ref_ty, TRef):
                a = self.fresh()
                self.unify(ref_ty, TRef(RefQual.W, a), t.span)
                return TSum(TUnit(), a)
            return TSum(TUnit(), ref_ty.contents)
        if isinstance(t, Swap):
            ref_ty = walk(self.infer(t.ref, env), self.subst)
            if t.qual is RefQual.S:
                a = self.fresh()
                self.unify(ref_ty, TRef(RefQual.S, a), t.span)
                val_ty = self.infer(t.value, env)
                # a strong swap retypes the cell at the new payload
                return TProd(TRef(RefQual.S, val_ty), a)
            if not isinstance(ref_ty, TRef):
                a = self.fresh()
                self.unify(ref_ty, TRef(RefQual.W, a), t.span)
                ref_ty = TRef(RefQual.W, a)
            val_ty = self.infer(t.value, env)
            self.unify(val_ty, ref_ty.contents, t.span)
            return TProd(ref_ty, ref_ty.contents)
        if isinstance(t, DupBind):
            return self._infer_dup(t, env)
        if isinstance(t, DropBind):
            src_ty = self.infer(t.src, env)
            self.emit(Pred(PredCon.DROP, apply_subst(self.subst, src_ty)),
                      t.span, f"drop of {S.pretty_term(t.src, 2)}")
            return self.infer(t.body, env)
        raise TypeError(f"cannot infer a type for {type(t).__name__}")

    def _infer_lam(self, t: Lam, env: TypeEnv) -> Type:
        param_ty = self.fresh()
        env2 = dict(env)
        env2[t.param] = monomorphic(param_ty)
        body_ty = self.infer(t.body, env2)
        captured: list[Type] = []
        for name in sorted(E.free_vars(t.body) - {t.param}):
            if name in self.toplevel and name not in env:
                continue
            if name in self.toplevel:
                # a top-level name is a fresh reference at each occurrence,
                # never part of the closure environment
                continue
            scheme = env.get(name)
            if scheme is None:
                raise UnboundVariable(f"unbound variable {name!r}", t.span)
            captured.append(self._instance_type(scheme))
        for loc in sorted(_term_locs_set(t.body)):
            entry = self.store_typing.get(loc)
            if entry is None:
                raise UnboundLocation(
                    f"location ℓ{loc} has no store typing", t.span)
            rq, ty = entry
            captured.append(TRef(rq, ty))
        for pred in S.sorted_preds(C.constrain_env(t.qual, captured)):
            self.emit(pred, t.span,
                      f"the closure environment of a -{t.qual}> function")
        return TArrow(param_ty, body_ty, t.qual)

    def _infer_dup(self, t: DupBind, env: TypeEnv) -> Type:
        src_ty = self.infer(t.src, env)
        self.emit(Pred(PredCon.DUP, apply_subst(self.subst, src_ty)),
                  t.span, f"dup of {S.pretty_term(t.src, 2)}")
        if isinstance(t.src, Var):
            # both copies share the source variable's scheme and
            # instantiate it independently at each occurrence
            shared = env[t.src.name]
        elif is_syntactic_value(t.src):
            shared = self._generalize_local(src_ty, env)
        else:
            shared = monomorphic(src_ty)
        env2 = dict(env)
        env2[t.x1] = shared
        env2[t.x2] = shared
        return self.infer(t.body, env2)

    # -- generalization

    def _env_free_vars(self, env: TypeEnv) -> frozenset[str]:
        out: set[str] = set()
        for scheme in env.values():
            for name in scheme.free_type_vars():
                out.update(S.free_type_vars(apply_subst(self.subst, TVar(name))))
        for _, ty in self.store_typing.values():
            out.update(S.free_type_vars(apply_subst(self.subst, ty)))
        return frozenset(out)

    def _reduced_constraints(self) -> list[tuple[Pred, Origin]]:
        out: list[tuple[Pred, Origin]] = []
        seen: set[Pred] = set()
        for pred, origin in self.constraints:
            p = Pred(pred.con, apply_subst(self.subst, pred.arg))
            for q in C.to_hnf(p, self.instances, span=origin.span,
                              reason=origin.reason):
                if q not in seen:
                    seen.add(q)
                    out.append((q, origin))
        return out

    def _generalize_local(self, ty: Type, env: TypeEnv) -> Scheme:
        return self._generalize(ty, env, top_level=False)

    def _generalize(self, ty: Type, env: TypeEnv, *, top_level: bool) -> Scheme:
        ty = apply_subst(self.subst, ty)
        env_ftv = self._env_free_vars(env)
        order: list[str] = []
        S._collect_order(ty, S.free_type_vars(ty) - env_ftv, order)
        gvars = set(order)
        reduced = self._reduced_constraints()
        scheme_preds: list[Pred] = []
        deferred: list[tuple[Pred, Origin]] = []
        for pred, origin in reduced:
            name = pred.arg.name  # head-normal predicates constrain a variable
            if name in gvars:
                scheme_preds.append(pred)
            elif name in env_ftv or not top_level:
                deferred.append((pred, origin))
            else:
                raise AmbiguousScheme(
                    f"ambiguous constraint {S.pretty_pred(pred)}: "
                    f"{pred.arg.name!r} does not occur in the inferred type "
                    f"{S.pretty_type(ty)}", origin.span)
        self.constraints = deferred
        rename = _pretty_names(order, avoid=S.free_type_vars(ty) - set(order))
        body = S._rename_type(ty, rename)
        preds = frozenset(Pred(p.con, S._rename_type(p.arg, rename))
                          for p in scheme_preds)
        return Scheme(tuple(rename[v] for v in order), preds, body)


def _pretty_names(order: list[str], avoid: frozenset[str]) -> dict[str, str]:
    letters = "abcdefghijklmnopqrstuvwxyz"
    out: dict[str, str] = {}
    i = 0
    for name in order:
        while True:
            cand = letters[i % 26] + ("" if i < 26 else str(i // 26))
            i += 1
            if cand not in avoid:
                break
        out[name] = cand
    return out


# ---------------------------------------------------------------------------
# Module-level operations


def infer_term(env: TypeEnv, t: Term, *,
               toplevel: frozenset[str] = frozenset(),
               store_typing: dict[int, tuple[RefQual, Type]] | None = None,
               instances: C.InstanceEnv = C.DEFAULT_INSTANCES,
               ) -> tuple[frozenset[Pred], Type]:
    """Principal type and residual constraints of an internal term."""
    inf = Inference(toplevel=toplevel, store_typing=store_typing,
                    instances=instances)
    ty = inf.infer(t, dict(env))
    preds = frozenset(Pred(p.con, apply_subst(inf.subst, p.arg))
                      for p, _ in inf.constraints)
    return preds, apply_subst(inf.subst, ty)


def generalize(env: TypeEnv, preds, ty: Type,
               instances: C.InstanceEnv = C.DEFAULT_INSTANCES) -> Scheme:
    """Reduce the constraints, quantify what is free in the type but not
    the environment, and reject residual constraints on variables that
    appear in neither (ambiguity)."""
    inf = Inference(instances=instances)
    for p in S.sorted_preds(preds):
        inf.emit(p, None, "given constraint")
    return inf._generalize(ty, env, top_level=True)


@dataclass(frozen=True)
class CheckedDecl:
    name: str
    scheme: Scheme
    annotated: Term
    internal: Term


def check_declarations(program: Program, *,
                       check_signatures: bool = True,
                       instances: C.InstanceEnv = C.DEFAULT_INSTANCES,
                       ) -> list[CheckedDecl]:
    """Elaborate, infer, and validate every definition, in order.

    Each definition may refer only to earlier ones.  Every top-level
    binding must have an unlimited type (both Dup and Drop), and a
    declared signature must match the inferred scheme up to renaming and
    mutual entailment of the constraint sets.
    """
    sigs = program.signatures()
    out: list[CheckedDecl] = []
    schemes: TypeEnv = {}
    for decl in program.definitions():
        toplevel = frozenset(schemes)
        try:
            ann = E.insert(decl.body, toplevel)
            ctx = VarMultiset.of(E.free_vars(decl.body) - toplevel)
            internal = E.lower(ann, free_ctx=ctx)
            inf = Inference(toplevel=toplevel, instances=instances)
            ty = inf.infer(internal, dict(schemes))
            scheme = inf._generalize(ty, schemes, top_level=True)
            _check_top_level_unlimited(decl.name, scheme, instances)
            if check_signatures and decl.name in sigs:
                _check_signature(decl.name, sigs[decl.name], scheme, instances)
        except ClampError as exc:
            if getattr(exc, "decl", None) is None:
                exc.decl = decl.name
                exc.message = f"in {decl.name!r}: {exc.message}"
                exc.args = (exc.message,)
            raise
        schemes[decl.name] = scheme
        out.append(CheckedDecl(decl.name, scheme, ann, internal))
    return out


def infer_program(program: Program, *,
                  check_signatures: bool = True,
                  instances: C.InstanceEnv = C.DEFAULT_INSTANCES,
                  ) -> dict[str, Scheme]:
    checked = check_declarations(program, check_signatures=check_signatures,
                                 instances=instances)
    return {d.name: d.scheme for d in checked}


def _check_top_level_unlimited(name: str, scheme: Scheme,
                               instances: C.InstanceEnv) -> None:
    need = [Pred(PredCon.DUP, scheme.body), Pred(PredCon.DROP, scheme.body)]
    try:
        residue = C.reduce_context(need, instances)
    except C.IrreduciblePredicate as exc:
        raise TopLevelNotUnlimited(
            f"top-level binding {name!r} must be unlimited, but "
            f"{S.pretty_pred(exc.pred)} is unsatisfiable "
            f"(required by {S.pretty_pred(exc.root)})") from exc
    for p in S.sorted_preds(residue):
        if not C.entails(scheme.constraints, p, instances):
            raise TopLevelNotUnlimited(
                f"top-level binding {name!r} must be unlimited, but "
                f"{S.pretty_pred(p)} is not entailed by its constraints")


def _check_signature(name: str, declared: Scheme, inferred: Scheme,
                     instances: C.InstanceEnv) -> None:
    mapping = _match_bodies(declared, inferred)
    if mapping is None:
        raise SignatureMismatch(
            f"signature of {name!r} does not match the inferred scheme: "
            f"declared {S.pretty_scheme(declared)}, "
            f"inferred {S.pretty_scheme(inferred)}")
    declared_preds = frozenset(
        Pred(p.con, subst_type_vars(p.arg, mapping))
        for p in declared.constraints)
    if not (C.entails_all(declared_preds, inferred.constraints, instances)
            and C.entails_all(inferred.constraints, declared_preds, instances)):
        raise SignatureMismatch(
            f"signature of {name!r} has constraints not equivalent to the "
            f"inferred ones: declared {S.pretty_scheme(declared)}, "
            f"inferred {S.pretty_scheme(inferred)}")


def _match_bodies(declared: Scheme, inferred: Scheme) -> dict[str, Type] | None:
    """A renaming of the declared quantified variables that makes the two
    bodies equal, bijective on the inferred quantified variables."""
    mapping: dict[str, Type] = {}
    used: set[str] = set()
    dq = frozenset(declared.quantified)
    iq = frozenset(inferred.quantified)

    def go(d: Type, i: Type) -> bool:
        if isinstance(d, TVar):
            if d.name in dq:
                if not (isinstance(i, TVar) and i.name in iq):
                    return False
                bound = mapping.get(d.name)
                if bound is not None:
                    return bound == i
                if i.name in used:
                    return False
                mapping[d.name] = i
                used.add(i.name)
                return True
            return d == i
        if isinstance(d, TArrow) and isinstance(i, TArrow):
            return (d.qual is i.qual and go(d.dom, i.dom) and go(d.cod, i.cod))
        if isinstance(d, TProd) and isinstance(i, TProd):
            return go(d.left, i.left) and go(d.right, i.right)
        if isinstance(d, TSum) and isinstance(i, TSum):
            return go(d.left, i.left) and go(d.right, i.right)
        if isinstance(d, TRef) and isinstance(i, TRef):
            return d.qual is i.qual and go(d.contents, i.contents)
        if isinstance(d, TUnit) and isinstance(i, TUnit):
            return True
        return False

    if not go(declared.body, inferred.body):
        return None
    for q in declared.quantified:
        # a quantified variable used only in constraints cannot correspond
        # to anything in the inferred scheme; keep it distinct
        if q not in mapping:
            mapping[q] = TVar(f"?{q}")
    return mapping
