"""Surface syntax: lexer, recursive-descent parser and elaborator.

Parsing produces a light surface tree; elaboration turns it into kernel
syntax.  Elaboration is type directed because several sugars need the type of
a sub-expression (the binder of `x <- e1; e2`, the zero continuation of
`local e`) or the ambient effect (`e |> lam`, `local e`).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import typecheck as tc
from .prims import INFIX, prims_for
from .syntax import (
    BOOL,
    CHAR,
    EMPTY,
    FALSE,
    LOSS,
    NAT,
    STR,
    TRUE,
    UNIT,
    UNIT_V,
    App,
    Base,
    Cases,
    Const,
    Cons,
    Effect,
    Expr,
    Fn,
    Fold,
    GLocal,
    Handle,
    Handler,
    Inl,
    Inr,
    Iter,
    Lam,
    ListT,
    Loss,
    Nil,
    OpCall,
    OpSig,
    PrimApp,
    Product,
    Proj,
    Reset,
    Signature,
    Succ,
    Sum,
    Then,
    Tuple,
    Type,
    Var,
    Zero,
    ZeroCont,
    cont_from_lam,
    fresh,
    fv,
    nat,
    subst,
)


class ParseError(Exception):
    def __init__(self, line: int, column: int, message: str):
        self.line = line
        self.column = column
        self.message = message or "parse error"
        super().__init__(f"{line}:{column}: {self.message}")


# ---------------------------------------------------------------------------
# Lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|--[^\n]*)
  | (?P<nat>\#[0-9]+)
  | (?P<num>[0-9]+(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?)
  | (?P<char>'(?:[^'\\\n]|\\.)*')
  | (?P<str>"(?:[^"\\\n]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_']*)
  | (?P<sym>\|>|=>|->|<-|<=|==|\+\+|[\\^{}()\[\],.:;|!=+\-*/<>])
    """,
    re.VERBOSE,
)

KEYWORDS = {
    "effect", "handler", "return", "handle", "with", "loss", "local", "reset", "lreset",
    "iter", "fold", "cases", "of", "inl", "inr", "zero", "succ", "nil", "cons", "if", "then",
    "else", "true", "false", "def", "main", "type", "base", "loss_dim", "let", "in", "list",
}


@dataclass(frozen=True)
class Tok:
    kind: str  # ident, kw, num, nat, char, str, sym, eof
    text: str
    line: int
    col: int


def _unescape(body: str) -> str:
    out, i = [], 0
    simple = {"n": "\n", "t": "\t", "\\": "\\", "'": "'", '"': '"', "0": "\0", "r": "\r"}
    while i < len(body):
        c = body[i]
        if c == "\\" and i + 1 < len(body):
            nxt = body[i + 1]
            if nxt == "u" and i + 5 < len(body) + 1:
                out.append(chr(int(body[i + 2:i + 6], 16)))
                i += 6
                continue
            out.append(simple.get(nxt, nxt))
            i += 2
            continue
        out.append(c)
        i += 1
    return "".join(out)


def lex(text: str) -> list[Tok]:
    toks: list[Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(line, pos - line_start + 1, f"unexpected character {text[pos]!r}")
        kind = m.lastgroup
        s = m.group()
        col = pos - line_start + 1
        if kind != "ws":
            if kind == "ident" and s in KEYWORDS:
                kind = "kw"
            toks.append(Tok(kind, s, line, col))
        nl = s.count("\n")
        if nl:
            line += nl
            line_start = pos + s.rindex("\n") + 1
        pos = m.end()
    toks.append(Tok("eof", "", line, pos - line_start + 1))
    return toks


# ---------------------------------------------------------------------------
# Surface tree


@dataclass
class N:
    kind: str
    pos: tuple[int, int]
    args: tuple

    def __init__(self, kind, pos, *args):
        self.kind, self.pos, self.args = kind, pos, args


@dataclass
class SourceProgram:
    loss_dim: int
    base_decls: list[str]
    signature: Signature
    defs: dict[str, object]
    main: Expr
    main_eff: Effect = EMPTY
    main_ty: Type | None = None


# ---------------------------------------------------------------------------
# Parser


class Parser:
    def __init__(self, text: str):
        self.toks = lex(text)
        self.i = 0
        # set while parsing the right-hand side of `x <- e;` so that an
        # open-ended tail such as an else branch stops at the `;`
        self.noseq = False

    # -- token helpers

    @property
    def tok(self) -> Tok:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str, kind: str | None = None) -> bool:
        t = self.tok
        return t.text == text and t.kind in ((kind,) if kind else ("sym", "kw"))

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Tok:
        if not self.at(text):
            self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> str:
        t = self.tok
        if t.kind != "ident":
            self.error(f"expected an identifier, found {t.text or 'end of input'!r}")
        self.i += 1
        return t.text

    def error(self, msg: str):
        t = self.tok
        raise ParseError(t.line, t.col, msg)

    def pos(self) -> tuple[int, int]:
        return (self.tok.line, self.tok.col)

    # -- program

    def program(self) -> list[N]:
        decls = []
        while self.tok.kind != "eof":
            decls.append(self.decl())
        return decls

    def decl(self) -> N:
        p = self.pos()
        if self.accept("loss_dim"):
            t = self.tok
            if t.kind != "num" or not t.text.isdigit():
                self.error("loss_dim expects a positive integer")
            self.i += 1
            return N("loss_dim", p, int(t.text))
        if self.accept("base"):
            return N("base", p, self.ident())
        if self.accept("type"):
            name = self.ident()
            self.expect("=")
            return N("type", p, name, self.type_())
        if self.accept("effect"):
            label = self.ident()
            self.expect("{")
            ops = []
            while not self.at("}"):
                op_pos = self.pos()
                name = self.ident()
                self.expect(":")
                out = self.sum_type()
                self.expect("->")
                inn = self.type_()
                ops.append((name, out, inn, op_pos))
                if not self.accept(","):
                    break
            self.expect("}")
            return N("effect", p, label, ops)
        if self.accept("def"):
            name = self.ident()
            params = []
            if self.accept("["):
                params.append(self.ident())
                while self.accept(","):
                    params.append(self.ident())
                self.expect("]")
            self.expect("=")
            body = self.handler_lit() if self.at("handler") else self.expr()
            return N("def", p, name, params, body)
        if self.accept("main"):
            eff = self.effect() if self.accept("!") else None
            self.expect("=")
            return N("main", p, eff, self.expr())
        self.error(f"expected a declaration, found {self.tok.text or 'end of input'!r}")

    # -- effects and types

    def effect(self) -> N:
        p = self.pos()
        self.expect("{")
        items = []
        while not self.at("}"):
            items.append(self.ident())
            if not self.accept(","):
                break
        self.expect("}")
        return N("eff", p, items)

    def type_(self) -> N:
        p = self.pos()
        t = self.sum_type()
        if self.accept("->"):
            res = self.type_()
            self.expect("!")
            return N("fn", p, t, res, self.effect())
        return t

    def sum_type(self) -> N:
        p = self.pos()
        t = self.atom_type()
        while self.accept("+"):
            t = N("sum", p, t, self.atom_type())
        return t

    def atom_type(self) -> N:
        p = self.pos()
        t = self.tok
        if t.kind in ("ident", "kw") and t.text in ("loss", "char", "str", "nat", "bool"):
            self.i += 1
            return N("tname", p, t.text)
        if self.accept("list"):
            self.expect("[")
            el = self.type_()
            self.expect("]")
            return N("list", p, el)
        if t.kind == "ident":
            self.i += 1
            return N("tname", p, t.text)
        if self.accept("("):
            if self.accept(")"):
                return N("prod", p, [])
            first = self.type_()
            if self.accept(")"):
                return first
            items = [first]
            self.expect(",")
            while not self.at(")"):
                items.append(self.type_())
                if not self.accept(","):
                    break
            self.expect(")")
            return N("prod", p, items)
        self.error(f"expected a type, found {t.text or 'end of input'!r}")

    # -- expressions

    def expr(self) -> N:
        p = self.pos()
        t = self.tok
        if t.kind == "ident" and (self.peek().text == "<-" or (self.peek().text == ":" and self._bind_ahead())):
            name = self.ident()
            ann = None
            if self.accept(":"):
                ann = self.type_()
            self.expect("<-")
            saved, self.noseq = self.noseq, True
            rhs = self.pipe()
            self.noseq = saved
            self.expect(";")
            return N("bind", p, name, ann, rhs, self.expr())
        if self.accept("let"):
            name = self.ident()
            ann = self.type_() if self.accept(":") else None
            self.expect("=")
            rhs = self.open_expr()
            self.expect("in")
            return N("bind", p, name, ann, rhs, self.expr())
        e = self.pipe()
        if not self.noseq and self.accept(";"):
            return N("seq", p, e, self.expr())
        return e

    def open_expr(self) -> N:
        """An expression inside delimiters, where `;` sequencing is allowed again."""
        saved, self.noseq = self.noseq, False
        try:
            return self.expr()
        finally:
            self.noseq = saved

    def _bind_ahead(self) -> bool:
        depth = 0
        for k in range(self.i + 2, len(self.toks)):
            s = self.toks[k].text
            if s in ("(", "[", "{"):
                depth += 1
            elif s in (")", "]", "}"):
                depth -= 1
                if depth < 0:
                    return False
            elif depth == 0 and s == "<-":
                return True
            elif depth == 0 and s in (";", "=>", "=", "|", ".", "with"):
                return False
        return False

    def pipe(self) -> N:
        p = self.pos()
        e = self.cmp()
        while self.at("|>"):
            self.i += 1
            eff = self.effect() if self.accept("^") else None
            rhs = self.lam() if self.at("\\") else self.postfix()
            e = N("then", p, eff, e, rhs)
        return e

    def cmp(self) -> N:
        p = self.pos()
        e = self.concat()
        for op in ("<=", "<", "=="):
            if self.at(op):
                self.i += 1
                return N("prim", p, INFIX[op], N("tuple", p, [e, self.concat()]))
        return e

    def concat(self) -> N:
        p = self.pos()
        e = self.additive()
        while self.accept("++"):
            e = N("prim", p, "concat", N("tuple", p, [e, self.additive()]))
        return e

    def additive(self) -> N:
        p = self.pos()
        e = self.mult()
        while self.at("+") or self.at("-"):
            op = self.tok.text
            self.i += 1
            e = N("prim", p, INFIX[op], N("tuple", p, [e, self.mult()]))
        return e

    def mult(self) -> N:
        p = self.pos()
        e = self.app()
        while self.at("*") or self.at("/"):
            op = self.tok.text
            self.i += 1
            e = N("prim", p, INFIX[op], N("tuple", p, [e, self.app()]))
        return e

    _STOP = {")", "]", "}", ",", ";", "|", "=>", "|>", "of", "with", "then", "else", "in", "+", "-", "*", "/",
             "<", "<=", "==", "++", "!", "=", "->", "<-", ".", ":", ">", "def", "main", "effect", "type", "base",
             "loss_dim"}

    def _starts_atom(self) -> bool:
        t = self.tok
        if t.kind == "eof":
            return False
        if t.kind in ("ident", "num", "nat", "char", "str"):
            return True
        if t.text in self._STOP:
            return False
        return t.text in ("(", "true", "false", "inl", "inr", "cases", "zero", "succ", "iter", "fold", "nil",
                          "cons", "loss", "reset", "local", "list", "\\", "lreset", "handle", "if")

    def app(self) -> N:
        p = self.pos()
        e = self.postfix()
        while self._starts_atom():
            if self.tok.text in ("\\", "lreset", "handle", "if") or (self.tok.text == "local" and self.peek().text != "^"):
                e = N("app", p, e, self.expr())
                break
            e = N("app", p, e, self.postfix())
        return e

    def postfix(self) -> N:
        p = self.pos()
        e = self.atom()
        while self.at("."):
            self.i += 1
            t = self.tok
            if t.kind != "num":
                self.error("expected a projection index")
            self.i += 1
            for part in t.text.split("."):
                if not part.isdigit():
                    self.error("bad projection index")
                e = N("proj", p, e, int(part))
        return e

    def parens(self) -> N:
        """'(' ... ')' : unit, parenthesised expression, or tuple."""
        p = self.pos()
        self.expect("(")
        if self.accept(")"):
            return N("tuple", p, [])
        first = self.open_expr()
        if self.accept(")"):
            return first
        items = [first]
        self.expect(",")
        while not self.at(")"):
            items.append(self.open_expr())
            if not self.accept(","):
                break
        self.expect(")")
        return N("tuple", p, items)

    def lam(self) -> N:
        p = self.pos()
        self.expect("\\")
        if not self.accept("^"):
            self.error("lambdas need an effect annotation: \\^{...} x:T. e")
        eff = self.effect()
        if self.accept("("):
            binders = []
            while True:
                name = self.ident()
                self.expect(":")
                binders.append((name, self.type_()))
                if not self.accept(","):
                    break
            self.expect(")")
            self.expect(".")
            return N("lamtup", p, eff, binders, self.expr())
        name = self.ident()
        self.expect(":")
        ty = self.type_()
        self.expect(".")
        return N("lam", p, eff, name, ty, self.expr())

    def loss_lit(self, p) -> N:
        neg = self.accept("-")
        t = self.tok
        if t.kind == "num":
            self.i += 1
            x = float(t.text)
        elif t.kind == "ident" and t.text in ("nan", "inf"):
            self.i += 1
            x = float(t.text)
        else:
            self.error("expected a number")
        return -x if neg else x

    def atom(self) -> N:
        p = self.pos()
        t = self.tok
        if t.kind == "num" or (t.text == "-" and (self.peek().kind == "num" or self.peek().text in ("nan", "inf"))):
            return N("loss", p, [self.loss_lit(p)], False)
        if t.kind == "nat":
            self.i += 1
            return N("nat", p, int(t.text[1:]))
        if t.kind == "char":
            self.i += 1
            s = _unescape(t.text[1:-1])
            if len(s) != 1:
                raise ParseError(t.line, t.col, "character literal must hold one character")
            return N("char", p, s)
        if t.kind == "str":
            self.i += 1
            return N("str", p, _unescape(t.text[1:-1]))
        if t.text == "<" and t.kind == "sym":
            self.i += 1
            xs = [self.loss_lit(p)]
            while self.accept(","):
                xs.append(self.loss_lit(p))
            self.expect(">")
            return N("loss", p, xs, True)
        if t.kind == "ident":
            self.i += 1
            if t.text in ("nan", "inf"):
                return N("loss", p, [float(t.text)], False)
            if self.at("("):
                return N("call", p, t.text, self.parens())
            if self.at("[") and self.peek().text == "{":
                self.i += 1
                effs = [self.effect()]
                while self.accept(","):
                    effs.append(self.effect())
                self.expect("]")
                return N("inst", p, t.text, effs)
            return N("name", p, t.text)
        if t.text == "(":
            return self.parens()
        if t.text == "\\":
            return self.lam()
        if self.accept("true"):
            return N("true", p)
        if self.accept("false"):
            return N("false", p)
        if t.text in ("inl", "inr"):
            self.i += 1
            self.expect("[")
            a = self.type_()
            self.expect(",")
            b = self.type_()
            self.expect("]")
            self.expect("(")
            e = self.open_expr()
            self.expect(")")
            return N(t.text, p, a, b, e)
        if self.accept("cases"):
            s = self.pipe()
            self.expect("of")
            self.expect("{")
            self.expect("inl")
            x1 = self.ident()
            self.expect(":")
            t1 = self.type_()
            self.expect("=>")
            e1 = self.open_expr()
            self.expect("|")
            self.expect("inr")
            x2 = self.ident()
            self.expect(":")
            t2 = self.type_()
            self.expect("=>")
            e2 = self.open_expr()
            self.expect("}")
            return N("cases", p, s, x1, t1, e1, x2, t2, e2)
        if self.accept("if"):
            c = self.open_expr()
            self.expect("then")
            a = self.open_expr()
            self.expect("else")
            return N("if", p, c, a, self.expr())
        if self.accept("zero"):
            return N("zero", p)
        if t.text in ("succ", "loss", "reset"):
            self.i += 1
            self.expect("(")
            e = self.open_expr()
            self.expect(")")
            return N(t.text + "_", p, e)
        if t.text in ("iter", "fold", "cons"):
            self.i += 1
            args = self.parens()
            want = 2 if t.text == "cons" else 3
            if args.kind != "tuple" or len(args.args[0]) != want:
                self.error(f"{t.text} takes {want} arguments")
            return N(t.text, p, *args.args[0])
        if self.accept("nil"):
            self.expect("[")
            ty = self.type_()
            self.expect("]")
            return N("nil", p, ty)
        if self.accept("list"):
            self.expect("[")
            ty = self.type_()
            self.expect("]")
            args = self.parens()
            items = args.args[0] if args.kind == "tuple" else [args]
            return N("listlit", p, ty, items)
        if self.accept("local"):
            if self.accept("^"):
                eff = self.effect()
                self.expect("(")
                e = self.open_expr()
                self.expect(",")
                c = self.open_expr()
                self.expect(")")
                return N("glocal", p, eff, e, c)
            return N("local", p, self.expr())
        if self.accept("lreset"):
            return N("lreset", p, self.expr())
        if self.accept("handle"):
            if self.at("handler"):
                h = self.handler_lit()
            elif self.at("(") and self.peek().text == "handler":
                self.i += 1
                h = self.handler_lit()
                self.expect(")")
            else:
                hp = self.pos()
                name = self.ident()
                if self.at("[") and self.peek().text == "{":
                    self.i += 1
                    effs = [self.effect()]
                    while self.accept(","):
                        effs.append(self.effect())
                    self.expect("]")
                    h = N("inst", hp, name, effs)
                else:
                    h = N("name", hp, name)
            param = None if self.at("with") else self.postfix()
            self.expect("with")
            return N("handle", p, h, param, self.expr())
        self.error(f"expected an expression, found {t.text or 'end of input'!r}")

    def handler_lit(self) -> N:
        p = self.pos()
        self.expect("handler")
        label = self.ident()
        par = None
        if self.accept("["):
            par = self.type_()
            self.expect("]")
        io = None
        if self.accept(":"):
            a = self.type_()
            self.expect("=>")
            io = (a, self.type_())
        self.expect("!")
        eff = self.effect()
        self.expect("{")
        clauses = []
        while True:
            cp = self.pos()
            if self.accept("return"):
                name = "return"
            else:
                name = self.ident()
            names = None
            if self.accept("("):
                names = [self.ident()]
                while self.accept(","):
                    names.append(self.ident())
                self.expect(")")
            self.expect("=>")
            clauses.append((name, names, self.open_expr(), cp))
            if not self.accept("|"):
                break
        self.expect("}")
        return N("handler", p, label, par, io, eff, clauses)


# ---------------------------------------------------------------------------
# Elaboration


class Elaborator:
    def __init__(self, sig: Signature, aliases: dict[str, N], defs: dict[str, tuple[list[str], N]]):
        self.sig = sig
        self.aliases = aliases
        self.defs = defs
        self.prims = prims_for(sig.loss_dim)
        self.memo: dict[tuple, object] = {}
        self.active: set[str] = set()

    def fail(self, n: N, rule: str, msg: str):
        raise tc.TypeCheckError(rule, msg, position=n.pos)

    # -- effects and types

    def effect(self, n: N | None, eenv: dict[str, Effect]) -> Effect:
        if n is None:
            return EMPTY
        acc = EMPTY
        for item in n.args[0]:
            if item in eenv:
                acc = acc + eenv[item]
            elif item in self.sig.effects:
                acc = acc.add(item)
            else:
                self.fail(n, "type", f"unknown effect label {item}")
        return acc

    def type_(self, n: N, eenv: dict[str, Effect], seen: frozenset = frozenset()) -> Type:
        match n.kind:
            case "tname":
                name = n.args[0]
                if name == "nat":
                    return NAT
                if name == "bool":
                    return BOOL
                if name in self.aliases:
                    if name in seen:
                        self.fail(n, "type", f"recursive type alias {name}")
                    return self.type_(self.aliases[name], eenv, seen | {name})
                if name in self.sig.bases:
                    return Base(name)
                self.fail(n, "type", f"unknown type {name}")
            case "prod":
                return Product(tuple(self.type_(t, eenv, seen) for t in n.args[0]))
            case "sum":
                return Sum(self.type_(n.args[0], eenv, seen), self.type_(n.args[1], eenv, seen))
            case "list":
                return ListT(self.type_(n.args[0], eenv, seen))
            case "fn":
                a, b, eff = n.args
                return Fn(self.type_(a, eenv, seen), self.type_(b, eenv, seen), self.effect(eff, eenv))
        raise AssertionError(n.kind)

    # -- helpers

    def infer(self, env: dict[str, Type], e: Expr, n: N) -> Type:
        try:
            ty, _, _ = tc.infer_full(env, e, self.sig)
        except tc.TypeCheckError as err:
            if err.position is None:
                err.position = n.pos
            raise
        return ty

    def _pos(self, e: Expr, n: N) -> Expr:
        if getattr(e, "_pos", None) is None:
            try:
                object.__setattr__(e, "_pos", n.pos)
            except AttributeError:
                pass
        return e

    # -- expressions

    def expr(self, n: N, env: dict[str, Type], amb: Effect, eenv: dict[str, Effect]) -> Expr:
        return self._pos(self._expr(n, env, amb, eenv), n)

    def _expr(self, n: N, env, amb, eenv) -> Expr:
        E = lambda m, a=amb: self.expr(m, env, a, eenv)  # noqa: E731
        T = lambda m: self.type_(m, eenv)  # noqa: E731
        a = n.args
        match n.kind:
            case "loss":
                xs, vec = a
                d = self.sig.loss_dim
                if not vec and d > 1:
                    xs = xs * d
                if len(xs) != d:
                    self.fail(n, "const", f"loss literal has {len(xs)} components, loss_dim is {d}")
                return Const(tuple(float(x) for x in xs), LOSS)
            case "nat":
                return nat(a[0])
            case "char":
                return Const(a[0], CHAR)
            case "str":
                return Const(a[0], STR)
            case "true":
                return TRUE
            case "false":
                return FALSE
            case "name":
                return self.name(n, a[0], (), env, amb)
            case "inst":
                return self.name(n, a[0], tuple(self.effect(x, eenv) for x in a[1]), env, amb)
            case "call":
                name, argn = a
                arg = E(argn)
                if name in env or name in self.defs:
                    return App(self.name(n, name, (), env, amb), arg)
                if self.sig.op(name) is not None:
                    return OpCall(name, arg)
                if name in self.prims:
                    return PrimApp(name, arg)
                self.fail(n, "var", f"unknown name {name}")
            case "prim":
                return PrimApp(a[0], E(a[1]))
            case "app":
                return App(E(a[0]), E(a[1]))
            case "tuple":
                return Tuple(tuple(E(x) for x in a[0]))
            case "proj":
                return Proj(E(a[0]), a[1])
            case "inl":
                return Inl(T(a[0]), T(a[1]), E(a[2]))
            case "inr":
                return Inr(T(a[0]), T(a[1]), E(a[2]))
            case "cases":
                s, x1, t1, e1, x2, t2, e2 = a
                ty1, ty2 = T(t1), T(t2)
                return Cases(
                    E(s), x1, ty1, self.expr(e1, {**env, x1: ty1}, amb, eenv),
                    x2, ty2, self.expr(e2, {**env, x2: ty2}, amb, eenv),
                )
            case "if":
                return Cases(E(a[0]), "_", UNIT, E(a[1]), "_", UNIT, E(a[2]))
            case "zero":
                return Zero()
            case "succ_":
                return Succ(E(a[0]))
            case "loss_":
                return Loss(E(a[0]))
            case "reset_":
                return Reset(E(a[0]))
            case "iter":
                return Iter(E(a[0]), E(a[1]), E(a[2]))
            case "fold":
                return Fold(E(a[0]), E(a[1]), E(a[2]))
            case "cons":
                return Cons(E(a[0]), E(a[1]))
            case "nil":
                return Nil(T(a[0]))
            case "listlit":
                ty = T(a[0])
                out: Expr = Nil(ty)
                for item in reversed(a[1]):
                    out = Cons(E(item), out)
                return out
            case "lam":
                eff, x, tyn, body = a
                eff_v, ty = self.effect(eff, eenv), T(tyn)
                return Lam(eff_v, x, ty, self.expr(body, {**env, x: ty}, eff_v, eenv))
            case "lamtup":
                eff, binders, body = a
                eff_v = self.effect(eff, eenv)
                tys = [(x, T(t)) for x, t in binders]
                inner = dict(env)
                for x, t in tys:
                    inner[x] = t
                b = self.expr(body, inner, eff_v, eenv)
                z = fresh("z", fv(b) | frozenset(env))
                for i, (x, _) in enumerate(tys):
                    b = subst(b, Proj(Var(z), i), x)
                return Lam(eff_v, z, Product(tuple(t for _, t in tys)), b)
            case "bind":
                x, ann, rhs, body = a
                r = E(rhs)
                ty = T(ann) if ann is not None else self.infer(env, r, rhs)
                return App(Lam(amb, x, ty, self.expr(body, {**env, x: ty}, amb, eenv)), r)
            case "seq":
                r = E(a[0])
                ty = self.infer(env, r, a[0])
                return App(Lam(amb, "_", ty, self.expr(a[1], env, amb, eenv)), r)
            case "then":
                effn, e1, lamn = a
                eff = self.effect(effn, eenv) if effn is not None else amb
                return Then(eff, self.expr(e1, env, eff, eenv), self.as_lam(lamn, env, amb, eenv))
            case "glocal":
                effn, e1, cn = a
                eff = self.effect(effn, eenv)
                return GLocal(eff, self.expr(e1, env, eff, eenv), cont_from_lam(self.as_lam(cn, env, amb, eenv)))
            case "local":
                b = E(a[0])
                return GLocal(amb, b, ZeroCont(amb, self.infer(env, b, a[0]), self.sig.loss_dim))
            case "lreset":
                b = E(a[0])
                return Reset(GLocal(amb, b, ZeroCont(amb, self.infer(env, b, a[0]), self.sig.loss_dim)))
            case "handle":
                hn, pn, bn = a
                h = self.handler_ref(hn, env, eenv)
                p = E(pn) if pn is not None else UNIT_V
                return Handle(h, p, self.expr(bn, env, h.body_eff, eenv))
            case "handler":
                self.fail(n, "handler", "a handler can only appear after `handle`")
        raise AssertionError(n.kind)

    def as_lam(self, n: N, env, amb, eenv) -> Lam:
        e = self.expr(n, env, amb, eenv)
        if not isinstance(e, Lam):
            self.fail(n, "then", "expected a lambda")
        return e

    def name(self, n: N, name: str, effs: tuple[Effect, ...], env, amb) -> Expr:
        if name in env and not effs:
            return Var(name)
        if name in self.defs:
            d = self.instantiate(n, name, effs, amb)
            if isinstance(d, Handler):
                self.fail(n, "handler", f"{name} is a handler; use it with `handle`")
            return d
        if self.sig.op(name) is not None or name in self.prims:
            self.fail(n, "var", f"{name} must be applied to an argument")
        self.fail(n, "var", f"unbound variable {name}")

    def instantiate(self, n: N, name: str, effs: tuple[Effect, ...], amb: Effect):
        params, body = self.defs[name]
        if len(params) != len(effs):
            self.fail(n, "var", f"{name} takes {len(params)} effect arguments, given {len(effs)}")
        key = (name, effs, amb)
        if key in self.memo:
            return self.memo[key]
        if name in self.active:
            self.fail(n, "var", f"definition {name} refers to itself")
        self.active.add(name)
        try:
            eenv = dict(zip(params, effs))
            if body.kind == "handler":
                out = self.handler(body, {}, eenv)
            else:
                out = self.expr(body, {}, amb, eenv)
        finally:
            self.active.discard(name)
        self.memo[key] = out
        return out

    def handler_ref(self, n: N, env, eenv) -> Handler:
        if n.kind == "handler":
            return self.handler(n, env, eenv)
        name = n.args[0]
        effs = tuple(self.effect(x, eenv) for x in n.args[1]) if n.kind == "inst" else ()
        if name not in self.defs:
            self.fail(n, "handler", f"unknown handler {name}")
        h = self.instantiate(n, name, effs, EMPTY)
        if not isinstance(h, Handler):
            self.fail(n, "handler", f"{name} is not a handler")
        return h

    def handler(self, n: N, env, eenv) -> Handler:
        label, parn, io, effn, clauses = n.args
        if label not in self.sig.effects:
            self.fail(n, "handler", f"unknown effect label {label}")
        eps = self.effect(effn, eenv)
        par = self.type_(parn, eenv) if parn is not None else UNIT
        parameterized = parn is not None
        sigma = sigma2 = None
        if io is not None:
            sigma, sigma2 = self.type_(io[0], eenv), self.type_(io[1], eenv)
        op_clauses = []
        ret = None
        for cname, names, body, cp in clauses:
            cn = N("clause", cp)
            if names is None:
                lam = self.expr(body, env, eps, eenv)
                if not isinstance(lam, Lam):
                    self.fail(cn, "handler", f"clause {cname} must be a lambda")
            else:
                if sigma is None:
                    self.fail(cn, "handler", "clause patterns need the handler's `: σ => σ'` annotation")
                lam = self.clause_sugar(cn, cname, names, body, env, eenv, eps, par, parameterized, sigma, sigma2)
            if cname == "return":
                if ret is not None:
                    self.fail(cn, "handler", "duplicate return clause")
                ret = lam
            else:
                op_clauses.append((cname, lam))
        if ret is None:
            self.fail(n, "handler", "missing return clause")
        order = {s.name: i for i, s in enumerate(self.sig.ops_of(label))}
        op_clauses.sort(key=lambda c: order.get(c[0], len(order)))
        return Handler(label, par, tuple(op_clauses), ret, eps)

    def clause_sugar(self, cn, cname, names, body, env, eenv, eps, par, parameterized, sigma, sigma2) -> Lam:
        if cname == "return":
            want = 2 if parameterized else 1
            if len(names) != want:
                self.fail(cn, "handler", f"return clause binds {want} names")
            zty = Product((par, sigma))
            binds = dict(zip(names, (par, sigma) if parameterized else (sigma,)))
            b = self.expr(body, {**env, **binds}, eps, eenv)
            z = fresh("z", fv(b) | frozenset(env))
            if parameterized:
                b = subst(subst(b, Proj(Var(z), 0), names[0]), Proj(Var(z), 1), names[1])
            else:
                b = subst(b, Proj(Var(z), 1), names[0])
            return Lam(eps, z, zty, b)
        s = self.sig.op(cname)
        if s is None or s.label != self.sig.label_of(cname):
            self.fail(cn, "handler", f"unknown operation {cname}")
        raw_l = Fn(Product((par, s.in_ty)), LOSS, eps)
        raw_k = Fn(Product((par, s.in_ty)), sigma2, eps)
        zty = Product((par, s.out_ty, raw_l, raw_k))
        if parameterized:
            if len(names) != 4:
                self.fail(cn, "handler", f"clause {cname} binds (p, x, l, k)")
            tys = (par, s.out_ty, raw_l, raw_k)
        else:
            if len(names) != 3:
                self.fail(cn, "handler", f"clause {cname} binds (x, l, k)")
            tys = (s.out_ty, Fn(s.in_ty, LOSS, eps), Fn(s.in_ty, sigma2, eps))
        b = self.expr(body, {**env, **dict(zip(names, tys))}, eps, eenv)
        z = fresh("z", fv(b) | frozenset(env))
        zv = Var(z)
        if parameterized:
            for i, x in enumerate(names):
                b = subst(b, Proj(zv, i), x)
        else:
            y = fresh("y", frozenset((z,)))
            unit_wrap = lambda i, res: Lam(  # noqa: E731
                eps, y, s.in_ty, App(Proj(zv, i), Tuple((UNIT_V, Var(y))))
            )
            b = subst(b, Proj(zv, 1), names[0])
            b = subst(b, unit_wrap(2, LOSS), names[1])
            b = subst(b, unit_wrap(3, sigma2), names[2])
        return Lam(eps, z, zty, b)


# ---------------------------------------------------------------------------
# Entry points


def parse_program(text: str, prelude: str | None = None) -> SourceProgram:
    decls = Parser(prelude).program() if prelude else []
    decls += Parser(text).program()
    loss_dim = 1
    bases: list[str] = []
    aliases: dict[str, N] = {}
    effect_decls: list[N] = []
    defs: dict[str, tuple[list[str], N]] = {}
    main = None
    for d in decls:
        match d.kind:
            case "loss_dim":
                loss_dim = d.args[0]
                if loss_dim < 1:
                    raise ParseError(*d.pos, "loss_dim must be positive")
            case "base":
                bases.append(d.args[0])
            case "type":
                aliases[d.args[0]] = d.args[1]
            case "effect":
                effect_decls.append(d)
            case "def":
                name, params, body = d.args
                defs[name] = (params, body)
            case "main":
                if main is not None:
                    raise ParseError(*d.pos, "more than one main")
                main = d
    if main is None:
        raise ParseError(1, 1, "program has no main")
    # Signature: op types may mention any declared label, so resolve types
    # against a label-only signature first.
    labels = {d.args[0] for d in effect_decls}
    stub_ops = [OpSig(f"__{lab}", UNIT, UNIT, lab) for lab in labels]
    stub = Signature.build(stub_ops, loss_dim, bases)
    el0 = Elaborator(stub, aliases, {})
    ops = []
    for d in effect_decls:
        label, op_list = d.args
        if not op_list:
            raise ParseError(*d.pos, f"effect {label} declares no operations")
        for name, out, inn, _ in op_list:
            ops.append(OpSig(name, el0.type_(out, {}), el0.type_(inn, {}), label))
    try:
        sig = Signature.build(ops, loss_dim, bases)
    except ValueError as err:
        raise ParseError(*main.pos, str(err)) from err
    el = Elaborator(sig, aliases, defs)
    main_eff = el.effect(main.args[0], {})
    main_e = el.expr(main.args[1], {}, main_eff, {})
    main_ty = el.infer({}, main_e, main.args[1])
    tc.check(None, main_e, main_ty, main_eff, sig)
    return SourceProgram(loss_dim, bases, sig, {k: v for k, v in defs.items()}, main_e, main_eff, main_ty)


def parse_expr(text: str, sig: Signature, amb: Effect = EMPTY, env: dict[str, Type] | None = None) -> Expr:
    p = Parser(text)
    n = p.expr()
    if p.tok.kind != "eof":
        p.error(f"unexpected {p.tok.text!r} after expression")
    return Elaborator(sig, {}, {}).expr(n, dict(env or {}), amb, {})


def parse_type(text: str, sig: Signature) -> Type:
    p = Parser(text)
    n = p.type_()
    if p.tok.kind != "eof":
        p.error(f"unexpected {p.tok.text!r} after type")
    return Elaborator(sig, {}, {}).type_(n, {})
