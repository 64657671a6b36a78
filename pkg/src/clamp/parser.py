"""Lexer and recursive-descent parser for the surface language.

Grammar sketch (see README for the full table):

    decl   ::= name '::' sig | name '=' expr
    sig    ::= [ctx '=>'] type        ctx ::= pred | '(' pred {',' pred} ')'
    pred   ::= ('Dup' | 'Drop') tatom
    type   ::= tsum ['-U>'|'-R>'|'-A>'|'-L>' type]        (arrows right-assoc)
    tsum   ::= tatom {'+' tatom}                          (left-assoc)
    tatom  ::= var | '()' | '(' type ')' | '(' type ',' type ')'
             | ('Ref_s' | 'Ref_w') tatom
    expr   ::= '\\' pat arrow expr | 'let' ... 'in' expr | 'case' ... | app
    app    ::= head {atom}
    head   ::= atom | ('inl'|'inr'|'new_s'|'new_w'|'release_s'|'release_w') atom
             | ('swap_s'|'swap_w') atom atom
    atom   ::= var | '()' | '(' expr ')' | '(' expr ',' expr ')'

Pair-pattern lambdas desugar to a fresh binder plus a pair let; the fresh
name is chosen to avoid every identifier in the source so printed output
stays reparseable.  Comments run from `--` to end of line.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ClampError, Span
from . import syntax as S
from .syntax import (
    ArrowQual, Pred, PredCon, Program, RefQual, Scheme, Term, Type,
)


class LexError(ClampError):
    pass


class ParseError(ClampError):
    pass


class DuplicateDefinition(ParseError):
    pass


class MissingDefinition(ParseError):
    pass


KEYWORDS = {
    "let", "in", "case", "of", "inl", "inr",
    "new_s", "new_w", "release_s", "release_w", "swap_s", "swap_w",
    "Dup", "Drop", "Ref_s", "Ref_w",
}

_UNARY_REF = {"new_s": RefQual.S, "new_w": RefQual.W,
              "release_s": RefQual.S, "release_w": RefQual.W}
_SWAP = {"swap_s": RefQual.S, "swap_w": RefQual.W}


@dataclass(frozen=True)
class Token:
    kind: str  # keyword text, symbol text, or one of LIDENT/UIDENT/QARROW/EOF
    text: str
    line: int
    col: int
    qual: ArrowQual | None = None

    @property
    def span(self) -> Span:
        return Span(self.line, self.col, self.line, self.col + len(self.text))


def tokenize(src: str) -> list[Token]:
    toks: list[Token] = []
    line, col, i, n = 1, 1, 0, len(src)

    def err(msg: str) -> LexError:
        return LexError(msg, Span(line, col, line, col + 1))

    while i < n:
        ch = src[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "-":
            nxt = src[i + 1] if i + 1 < n else ""
            if nxt == "-":
                while i < n and src[i] != "\n":
                    i += 1
                continue
            if nxt == ">":
                toks.append(Token("->", "->", line, col))
                i += 2
                col += 2
                continue
            if nxt in "URAL" and i + 2 < n and src[i + 2] == ">":
                text = src[i:i + 3]
                toks.append(Token("QARROW", text, line, col, ArrowQual(nxt)))
                i += 3
                col += 3
                continue
            raise err(f"stray '-' (expected an arrow like -U> or a -- comment)")
        if ch == ":" and i + 1 < n and src[i + 1] == ":":
            toks.append(Token("::", "::", line, col))
            i += 2
            col += 2
            continue
        if ch == "=" and i + 1 < n and src[i + 1] == ">":
            toks.append(Token("=>", "=>", line, col))
            i += 2
            col += 2
            continue
        if ch in "\\=(),;{}+":
            toks.append(Token(ch, ch, line, col))
            i += 1
            col += 1
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (src[j].isalnum() or src[j] == "_"):
                j += 1
            text = src[i:j]
            if text in KEYWORDS:
                kind = text
            elif text[0].isupper():
                kind = "UIDENT"
            else:
                kind = "LIDENT"
            toks.append(Token(kind, text, line, col))
            col += j - i
            i = j
            continue
        raise err(f"unsupported character {ch!r}")
    toks.append(Token("EOF", "", line, col))
    return toks


class Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.pos = 0
        self._idents = {t.text for t in tokens if t.kind == "LIDENT"}
        self._fresh_n = 0

    # -- token plumbing

    def peek(self, ahead: int = 0) -> Token:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def next(self) -> Token:
        tok = self.toks[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def expect(self, kind: str, what: str | None = None) -> Token:
        tok = self.peek()
        if tok.kind != kind:
            want = what or f"'{kind}'"
            raise ParseError(
                f"expected {want}, found {tok.text!r}" if tok.text
                else f"expected {want}, found end of input",
                tok.span)
        return self.next()

    def fail(self, msg: str) -> ParseError:
        return ParseError(msg, self.peek().span)

    def fresh_pair_binder(self) -> str:
        while True:
            name = f"_p{self._fresh_n}"
            self._fresh_n += 1
            if name not in self._idents:
                self._idents.add(name)
                return name

    def span_from(self, start: Token) -> Span:
        prev = self.toks[max(self.pos - 1, 0)]
        return Span(start.line, start.col, prev.line, prev.col + len(prev.text))

    # -- types and schemes

    def parse_type(self) -> Type:
        left = self.parse_type_sum()
        if self.peek().kind == "QARROW":
            q = self.next().qual
            cod = self.parse_type()
            return S.TArrow(left, cod, q)
        return left

    def parse_type_sum(self) -> Type:
        t = self.parse_type_atom()
        while self.peek().kind == "+":
            self.next()
            t = S.TSum(t, self.parse_type_atom())
        return t

    def parse_type_atom(self) -> Type:
        tok = self.peek()
        if tok.kind == "LIDENT":
            self.next()
            return S.TVar(tok.text)
        if tok.kind in ("Ref_s", "Ref_w"):
            self.next()
            qual = RefQual.S if tok.kind == "Ref_s" else RefQual.W
            return S.TRef(qual, self.parse_type_atom())
        if tok.kind == "(":
            self.next()
            if self.peek().kind == ")":
                self.next()
                return S.TUnit()
            t = self.parse_type()
            if self.peek().kind == ",":
                self.next()
                right = self.parse_type()
                self.expect(")")
                return S.TProd(t, right)
            self.expect(")")
            return t
        raise self.fail(f"expected a type, found {tok.text!r}")

    def parse_pred(self) -> Pred:
        tok = self.peek()
        if tok.kind not in ("Dup", "Drop"):
            raise self.fail(f"expected Dup or Drop, found {tok.text!r}")
        self.next()
        con = PredCon.DUP if tok.kind == "Dup" else PredCon.DROP
        return Pred(con, self.parse_type_atom())

    def parse_scheme(self) -> Scheme:
        preds: list[Pred] = []
        tok = self.peek()
        if tok.kind in ("Dup", "Drop"):
            preds.append(self.parse_pred())
            self.expect("=>")
        elif tok.kind == "(" and self.peek(1).kind in ("Dup", "Drop"):
            self.next()
            preds.append(self.parse_pred())
            while self.peek().kind == ",":
                self.next()
                preds.append(self.parse_pred())
            self.expect(")")
            self.expect("=>")
        body = self.parse_type()
        return close_scheme(frozenset(preds), body)

    # -- expressions

    def parse_expr(self) -> Term:
        tok = self.peek()
        if tok.kind == "\\":
            return self.parse_lambda()
        if tok.kind == "let":
            return self.parse_let()
        if tok.kind == "case":
            return self.parse_case()
        return self.parse_app()

    def parse_lambda(self) -> Term:
        start = self.expect("\\")
        if self.peek().kind == "(":
            self.next()
            x1 = self.expect("LIDENT", "a pattern variable").text
            self.expect(",")
            x2 = self.expect("LIDENT", "a pattern variable").text
            self.expect(")")
            if x1 == x2:
                raise ParseError(f"duplicate pattern variable {x1!r}", start.span)
            q = self.expect("QARROW", "a qualified arrow like -U>").qual
            body = self.parse_expr()
            fresh = self.fresh_pair_binder()
            span = self.span_from(start)
            inner = S.LetPair(x1, x2, S.Var(fresh, span), body, span)
            return S.Lam(q, fresh, inner, span)
        param = self.expect("LIDENT", "a parameter name").text
        q = self.expect("QARROW", "a qualified arrow like -U>").qual
        body = self.parse_expr()
        return S.Lam(q, param, body, self.span_from(start))

    def parse_let(self) -> Term:
        start = self.expect("let")
        if self.peek().kind == "(":
            self.next()
            x1 = self.expect("LIDENT", "a pattern variable").text
            self.expect(",")
            x2 = self.expect("LIDENT", "a pattern variable").text
            self.expect(")")
            if x1 == x2:
                raise ParseError(f"duplicate pattern variable {x1!r}", start.span)
            self.expect("=")
            rhs = self.parse_expr()
            self.expect("in")
            body = self.parse_expr()
            return S.LetPair(x1, x2, rhs, body, self.span_from(start))
        name = self.expect("LIDENT", "a variable name").text
        self.expect("=")
        rhs = self.parse_expr()
        self.expect("in")
        body = self.parse_expr()
        return S.Let(name, rhs, body, self.span_from(start))

    def parse_case(self) -> Term:
        start = self.expect("case")
        scrut = self.parse_expr()
        self.expect("of")
        self.expect("{")
        self.expect("inl")
        lvar = self.expect("LIDENT", "a branch variable").text
        self.expect("->")
        lbody = self.parse_expr()
        self.expect(";")
        self.expect("inr")
        rvar = self.expect("LIDENT", "a branch variable").text
        self.expect("->")
        rbody = self.parse_expr()
        self.expect("}")
        return S.Case(scrut, lvar, lbody, rvar, rbody, self.span_from(start))

    def parse_app(self) -> Term:
        head = self.parse_head()
        while self._starts_atom():
            arg = self.parse_atom()
            head = S.App(head, arg, self.span_from_term(head))
        return head

    def span_from_term(self, t: Term) -> Span | None:
        prev = self.toks[max(self.pos - 1, 0)]
        if t.span is None:
            return prev.span
        return Span(t.span.line, t.span.col, prev.line, prev.col + len(prev.text))

    def _starts_atom(self) -> bool:
        tok = self.peek()
        if tok.kind == "(":
            return True
        if tok.kind == "LIDENT":
            # a name directly followed by '::' or '=' opens the next declaration
            return self.peek(1).kind not in ("::", "=")
        return False

    def parse_head(self) -> Term:
        tok = self.peek()
        if tok.kind in ("inl", "inr"):
            self.next()
            value = self.parse_atom()
            ctor = S.Inl if tok.kind == "inl" else S.Inr
            return ctor(value, self.span_from(tok))
        if tok.kind in _UNARY_REF:
            self.next()
            arg = self.parse_atom()
            span = self.span_from(tok)
            if tok.kind.startswith("new"):
                return S.New(_UNARY_REF[tok.kind], arg, span)
            return S.Release(_UNARY_REF[tok.kind], arg, span)
        if tok.kind in _SWAP:
            self.next()
            ref = self.parse_atom()
            value = self.parse_atom()
            return S.Swap(_SWAP[tok.kind], ref, value, self.span_from(tok))
        return self.parse_atom()

    def parse_atom(self) -> Term:
        tok = self.peek()
        if tok.kind == "LIDENT":
            self.next()
            return S.Var(tok.text, tok.span)
        if tok.kind == "(":
            self.next()
            if self.peek().kind == ")":
                self.next()
                return S.UnitVal(self.span_from(tok))
            e = self.parse_expr()
            if self.peek().kind == ",":
                self.next()
                snd = self.parse_expr()
                self.expect(")")
                return S.Pair(e, snd, self.span_from(tok))
            self.expect(")")
            return e
        raise self.fail(f"expected an expression, found {tok.text!r}"
                        if tok.text else "expected an expression, found end of input")

    # -- declarations

    def parse_program(self, require_defs: bool = True) -> Program:
        decls: list[S.Decl] = []
        sigs: dict[str, Span | None] = {}
        defs: dict[str, Span | None] = {}
        while self.peek().kind != "EOF":
            name_tok = self.expect("LIDENT", "a declaration name")
            name = name_tok.text
            sep = self.peek()
            if sep.kind == "::":
                self.next()
                scheme = self.parse_scheme()
                if name in sigs:
                    raise DuplicateDefinition(
                        f"duplicate signature for {name!r}", name_tok.span)
                sigs[name] = name_tok.span
                decls.append(S.Sig(name, scheme, self.span_from(name_tok)))
            elif sep.kind == "=":
                self.next()
                body = self.parse_expr()
                if name in defs:
                    raise DuplicateDefinition(
                        f"duplicate definition for {name!r}", name_tok.span)
                defs[name] = name_tok.span
                decls.append(S.Def(name, body, self.span_from(name_tok)))
            else:
                raise self.fail(f"expected '::' or '=' after {name!r}")
        if require_defs:
            for name, span in sigs.items():
                if name not in defs:
                    raise MissingDefinition(
                        f"signature for {name!r} has no definition", span)
        return Program(tuple(decls))


def close_scheme(constraints: frozenset[Pred], body: Type) -> Scheme:
    """Quantify every free variable of a written signature, ordered by first
    occurrence in the body and then in the (canonically sorted) constraints."""
    every = free_vars_of(constraints, body)
    order: list[str] = []
    S._collect_order(body, every, order)
    for p in S.sorted_preds(constraints):
        S._collect_order(p.arg, every, order)
    return Scheme(tuple(order), constraints, body)


def free_vars_of(constraints: frozenset[Pred], body: Type) -> frozenset[str]:
    out = S.free_type_vars(body)
    for p in constraints:
        out |= S.free_type_vars(p.arg)
    return out


def parse_program(src: str, require_defs: bool = True) -> Program:
    return Parser(tokenize(src)).parse_program(require_defs)


def parse_expr(src: str) -> Term:
    p = Parser(tokenize(src))
    e = p.parse_expr()
    p.expect("EOF", "end of input")
    return e


def parse_type(src: str) -> Type:
    p = Parser(tokenize(src))
    t = p.parse_type()
    p.expect("EOF", "end of input")
    return t


def parse_scheme(src: str) -> Scheme:
    p = Parser(tokenize(src))
    s = p.parse_scheme()
    p.expect("EOF", "end of input")
    return s
