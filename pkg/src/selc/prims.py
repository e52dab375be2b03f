"""The primitive function table (rule R1).

Every primitive is first order and total on well-typed arguments.  Loss
arithmetic is IEEE: division by zero yields inf or nan rather than an error.
Comparisons on loss vectors are lexicographic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .syntax import (
    BOOL,
    CHAR,
    LOSS,
    NAT,
    STR,
    Const,
    Expr,
    Product,
    Succ,
    Type,
    Zero,
    bool_v,
    nat,
)


@dataclass(frozen=True)
class Prim:
    name: str
    arg_ty: Type
    res_ty: Type
    fn: Callable[[Expr, int], Expr]  # (argument value, loss_dim) -> value


def _loss2(arg: Expr) -> tuple[tuple, tuple]:
    a, b = arg.items
    return a.value, b.value


def _lossv(xs, dim: int) -> Const:
    return Const(tuple(float(x) for x in xs), LOSS)


def _div(a: float, b: float) -> float:
    if b == 0.0:
        if a == 0.0 or math.isnan(a):
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)
    return a / b


def _nat_of(e: Expr) -> int:
    n = 0
    while isinstance(e, Succ):
        n += 1
        e = e.expr
    if not isinstance(e, Zero):
        raise ValueError("not a numeral")
    return n


def _binop(f):
    return lambda arg, d: _lossv((f(x, y) for x, y in zip(*_loss2(arg))), d)


def _cmp(f):
    return lambda arg, d: bool_v(f(*_loss2(arg)))


def _comp(i: int):
    def run(arg: Expr, d: int) -> Expr:
        v = arg.value
        return _lossv((v[i],) * d, d)

    return run


def _loss2nat(arg: Expr, d: int) -> Expr:
    x = arg.value[0]
    if math.isnan(x) or x <= 0:
        return Zero()
    return nat(int(math.floor(min(x, 1e6))))


PAIR_LOSS = Product((LOSS, LOSS))
PAIR_CHAR = Product((CHAR, CHAR))
PAIR_STR = Product((STR, STR))


def prim_table(loss_dim: int = 1) -> dict[str, Prim]:
    t = [
        Prim("add", PAIR_LOSS, LOSS, _binop(lambda x, y: x + y)),
        Prim("sub", PAIR_LOSS, LOSS, _binop(lambda x, y: x - y)),
        Prim("mul", PAIR_LOSS, LOSS, _binop(lambda x, y: x * y)),
        Prim("div", PAIR_LOSS, LOSS, _binop(_div)),
        Prim("neg", LOSS, LOSS, lambda a, d: _lossv((-x for x in a.value), d)),
        Prim("lt", PAIR_LOSS, BOOL, _cmp(lambda x, y: x < y)),
        Prim("leq", PAIR_LOSS, BOOL, _cmp(lambda x, y: x <= y)),
        Prim("eq", PAIR_LOSS, BOOL, _cmp(lambda x, y: x == y)),
        Prim("chareq", PAIR_CHAR, BOOL, lambda a, d: bool_v(a.items[0].value == a.items[1].value)),
        Prim("streq", PAIR_STR, BOOL, lambda a, d: bool_v(a.items[0].value == a.items[1].value)),
        Prim("concat", PAIR_STR, STR, lambda a, d: Const(a.items[0].value + a.items[1].value, STR)),
        Prim("strlen", STR, LOSS, lambda a, d: _lossv((len(a.value),) * d, d)),
        Prim("distinct", STR, LOSS, lambda a, d: _lossv((len(set(a.value)),) * d, d)),
        Prim("nat2loss", NAT, LOSS, lambda a, d: _lossv((_nat_of(a),) * d, d)),
        Prim("loss2nat", LOSS, NAT, _loss2nat),
    ]
    table = {p.name: p for p in t}
    for i in range(loss_dim):
        table[f"comp{i}"] = Prim(f"comp{i}", LOSS, LOSS, _comp(i))
    return table


_TABLES: dict[int, dict[str, Prim]] = {}


def prims_for(loss_dim: int) -> dict[str, Prim]:
    tab = _TABLES.get(loss_dim)
    if tab is None:
        tab = _TABLES[loss_dim] = prim_table(loss_dim)
    return tab


INFIX = {"+": "add", "-": "sub", "*": "mul", "/": "div", "<": "lt", "<=": "leq", "==": "eq"}
