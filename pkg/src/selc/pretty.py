"""Printing of types, effects and expressions in kernel surface syntax.

The output re-parses to a syntactically equal expression.  Sub-expressions
that are not atoms are parenthesised, so the printer needs no precedence
table.
"""

from __future__ import annotations

import json

from . import loss as lossmod
from .syntax import (
    BOOL,
    FALSE,
    TRUE,
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
    LossCont,
    Nat,
    Nil,
    OpCall,
    PrimApp,
    Product,
    Proj,
    Reset,
    Succ,
    Sum,
    Then,
    Tuple,
    Type,
    Var,
    Zero,
)


def print_effect(eff: Effect) -> str:
    return "{" + ", ".join(eff) + "}"


def print_type(ty: Type) -> str:
    return _ty(ty, 0)


def _ty(ty: Type, prec: int) -> str:
    # prec: 0 function position allowed, 1 sum operand, 2 atom
    match ty:
        case Base(name):
            return name
        case Nat():
            return "nat"
        case Product(()):
            return "()"
        case Product((t,)):
            return "(" + _ty(t, 0) + ",)"
        case Product(items):
            return "(" + ", ".join(_ty(t, 0) for t in items) + ")"
        case ListT(t):
            return "list[" + _ty(t, 0) + "]"
        case Sum(a, b):
            if ty == BOOL:
                return "bool"
            s = _ty(a, 2) + " + " + _ty(b, 2)
            return s if prec <= 1 else "(" + s + ")"
        case Fn(a, b, eff):
            s = _ty(a, 1) + " -> " + _ty(b, 0) + " ! " + print_effect(eff)
            return s if prec == 0 else "(" + s + ")"
    raise ValueError(f"not a type: {ty!r}")


def print_literal(value, ty: Type) -> str:
    match ty:
        case Base("loss"):
            if len(value) == 1:
                return lossmod.fmt_float(value[0])
            return "<" + ", ".join(lossmod.fmt_float(x) for x in value) + ">"
        case Base("char"):
            return "'" + _escape(value, "'") + "'"
        case Base("str"):
            return '"' + _escape(value, '"') + '"'
    raise ValueError(f"no literal syntax for {ty}")


def _escape(s: str, quote: str) -> str:
    out = json.dumps(s, ensure_ascii=False)[1:-1]
    if quote == "'":
        out = out.replace('\\"', '"').replace("'", "\\'")
    return out


def _numeral(e: Expr) -> int | None:
    n = 0
    while isinstance(e, Succ):
        n += 1
        e = e.expr
    return n if isinstance(e, Zero) else None


def _is_atom(e: Expr) -> bool:
    match e:
        case Const(value, ty) if ty == Base("loss"):
            # vector literals start with `<`, which juxtaposition would read as a comparison
            return len(value) == 1 and not str(value[0]).startswith("-")
        case Const():
            return True
        case Var() | Tuple() | Zero() | Nil() | PrimApp() | OpCall() | Loss() | Reset() | Inl() | Inr():
            return True
        case Succ() | Iter() | Fold() | Cons() | Proj():
            return True
    return False


def _p(e: Expr) -> str:
    s = print_expr(e)
    return s if _is_atom(e) else "(" + s + ")"


def _args(e: Expr) -> str:
    """Argument list of a call-shaped form: name(a, b) means name((a, b))."""
    if isinstance(e, Tuple) and len(e.items) != 1:
        return "(" + ", ".join(print_expr(i) for i in e.items) + ")"
    return "(" + print_expr(e) + ")"


def print_handler(h: Handler) -> str:
    clauses = [f"{name} => {print_expr(lam)}" for name, lam in h.op_clauses]
    clauses.append(f"return => {print_expr(h.return_clause)}")
    return f"handler {h.label} [{print_type(h.param_ty)}] ! {print_effect(h.result_eff)} {{ " + " | ".join(clauses) + " }"


def print_cont(c: LossCont) -> str:
    return print_expr(c.to_lam())


def print_expr(e: Expr) -> str:
    match e:
        case Const(value, ty):
            return print_literal(value, ty)
        case Var(x):
            return x
        case PrimApp(p, a):
            return p + _args(a)
        case OpCall(op, a):
            return op + _args(a)
        case Lam(eff, x, ty, body):
            return f"\\^{print_effect(eff)} {x}:{print_type(ty)}. {print_expr(body)}"
        case App(f, a):
            fs = print_expr(f) if isinstance(f, App) else _p(f)
            return fs + " " + _p(a)
        case Tuple(()):
            return "()"
        case Tuple((a,)):
            return "(" + print_expr(a) + ",)"
        case Tuple(items):
            return "(" + ", ".join(print_expr(i) for i in items) + ")"
        case Proj(a, i):
            return _p(a) + "." + str(i)
        case Inl() if e == TRUE:
            return "true"
        case Inr() if e == FALSE:
            return "false"
        case Inl(lt, rt, a):
            return f"inl[{print_type(lt)}, {print_type(rt)}]({print_expr(a)})"
        case Inr(lt, rt, a):
            return f"inr[{print_type(lt)}, {print_type(rt)}]({print_expr(a)})"
        case Cases(s, x1, t1, e1, x2, t2, e2):
            return (
                f"cases {_p(s)} of {{ inl {x1}:{print_type(t1)} => {print_expr(e1)}"
                f" | inr {x2}:{print_type(t2)} => {print_expr(e2)} }}"
            )
        case Zero():
            return "zero"
        case Succ(a):
            n = _numeral(e)
            if n is not None:
                return f"#{n}"
            return f"succ({print_expr(a)})"
        case Iter(a, b, c):
            return f"iter({print_expr(a)}, {print_expr(b)}, {print_expr(c)})"
        case Nil(t):
            return f"nil[{print_type(t)}]"
        case Cons(a, b):
            return f"cons({print_expr(a)}, {print_expr(b)})"
        case Fold(a, b, c):
            return f"fold({print_expr(a)}, {print_expr(b)}, {print_expr(c)})"
        case Loss(a):
            return f"loss({print_expr(a)})"
        case Handle(h, p, b):
            return f"handle ({print_handler(h)}) {_p(p)} with {_p(b)}"
        case Then(eff, a, lam):
            return f"{_p(a)} |>^{print_effect(eff)} ({print_expr(lam)})"
        case GLocal(eff, b, c):
            return f"local^{print_effect(eff)}({print_expr(b)}, {print_cont(c)})"
        case Reset(b):
            return f"reset({print_expr(b)})"
    raise ValueError(f"not an expression: {e!r}")


def render_value(v: Expr) -> str:
    """User-facing rendering of a closed value: lists in brackets, nats as numbers."""
    match v:
        case Const(value, ty):
            return print_literal(value, ty)
        case Tuple(items):
            if len(items) == 1:
                return "(" + render_value(items[0]) + ",)"
            return "(" + ", ".join(render_value(i) for i in items) + ")"
        case Inl() if v == TRUE:
            return "true"
        case Inr() if v == FALSE:
            return "false"
        case Inl(_, _, a):
            return "inl(" + render_value(a) + ")"
        case Inr(_, _, a):
            return "inr(" + render_value(a) + ")"
        case Zero() | Succ():
            n = _numeral(v)
            if n is not None:
                return str(n)
        case Nil() | Cons():
            out = []
            while isinstance(v, Cons):
                out.append(render_value(v.head))
                v = v.tail
            if isinstance(v, Nil):
                return "[" + ", ".join(out) + "]"
    return print_expr(v)
