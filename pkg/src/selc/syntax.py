"""Abstract syntax of λC: effects, types, expressions, handlers, frames.

All nodes are immutable.  Expression nodes carry three lazily filled cache
slots (free variables, value-ness, closed typing) that never take part in
equality.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping

# ---------------------------------------------------------------------------
# Effects


class Effect:
    """A finite multiset of effect labels."""

    __slots__ = ("_items", "_hash")

    def __init__(self, counts: Mapping[str, int] | Iterable[str] = ()):
        if isinstance(counts, Mapping):
            acc = {k: int(v) for k, v in counts.items() if v}
        else:
            acc: dict[str, int] = {}
            for label in counts:
                acc[label] = acc.get(label, 0) + 1
        for label, n in acc.items():
            if n < 0:
                raise ValueError(f"negative multiplicity for {label}")
            if not label:
                raise ValueError("empty effect label")
        object.__setattr__(self, "_items", tuple(sorted(acc.items())))
        object.__setattr__(self, "_hash", hash(self._items))

    def __setattr__(self, name, value):
        raise AttributeError("Effect is immutable")

    @classmethod
    def of(cls, *labels: str) -> Effect:
        return cls(labels)

    def count(self, label: str) -> int:
        for k, n in self._items:
            if k == label:
                return n
        return 0

    def items(self) -> tuple[tuple[str, int], ...]:
        return self._items

    def labels(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self._items)

    def total(self) -> int:
        return sum(n for _, n in self._items)

    def add(self, label: str, n: int = 1) -> Effect:
        d = dict(self._items)
        d[label] = d.get(label, 0) + n
        return Effect(d)

    def __add__(self, other: Effect) -> Effect:
        d = dict(self._items)
        for k, n in other._items:
            d[k] = d.get(k, 0) + n
        return Effect(d)

    def join(self, other: Effect) -> Effect:
        d = dict(self._items)
        for k, n in other._items:
            d[k] = max(d.get(k, 0), n)
        return Effect(d)

    def sub(self, other: Effect) -> bool:
        """Sub-multiset order."""
        return all(n <= other.count(k) for k, n in self._items)

    __le__ = sub

    def __eq__(self, other):
        return isinstance(other, Effect) and self._items == other._items

    def __hash__(self):
        return self._hash

    def __bool__(self):
        return bool(self._items)

    def __iter__(self):
        for k, n in self._items:
            for _ in range(n):
                yield k

    def __repr__(self):
        return "{" + ", ".join(self) + "}"


EMPTY = Effect()

# ---------------------------------------------------------------------------
# Types


class Type:
    __slots__ = ()

    def __str__(self):
        from .pretty import print_type

        return print_type(self)


@dataclass(frozen=True, slots=True)
class Base(Type):
    name: str


@dataclass(frozen=True, slots=True)
class Product(Type):
    items: tuple[Type, ...]


@dataclass(frozen=True, slots=True)
class Sum(Type):
    left: Type
    right: Type


@dataclass(frozen=True, slots=True)
class Nat(Type):
    pass


@dataclass(frozen=True, slots=True)
class ListT(Type):
    elem: Type


@dataclass(frozen=True, slots=True)
class Fn(Type):
    arg: Type
    res: Type
    eff: Effect


LOSS = Base("loss")
CHAR = Base("char")
STR = Base("str")
UNIT = Product(())
BOOL = Sum(UNIT, UNIT)
NAT = Nat()
BUILTIN_BASES = frozenset({"loss", "char", "str"})


def is_first_order(ty: Type) -> bool:
    match ty:
        case Fn():
            return False
        case Product(items):
            return all(is_first_order(t) for t in items)
        case Sum(a, b):
            return is_first_order(a) and is_first_order(b)
        case ListT(a):
            return is_first_order(a)
        case _:
            return True


# ---------------------------------------------------------------------------
# Signatures


@dataclass(frozen=True, slots=True)
class OpSig:
    name: str
    out_ty: Type
    in_ty: Type
    label: str


class SignatureError(ValueError):
    pass


@dataclass(frozen=True)
class Signature:
    """Effect label typings plus the two program-wide parameters that the
    checker and primitives need: the loss dimension and declared bases."""

    effects: Mapping[str, tuple[OpSig, ...]]
    loss_dim: int = 1
    bases: frozenset[str] = BUILTIN_BASES

    def __post_init__(self):
        if self.loss_dim < 1:
            raise SignatureError("loss_dim must be at least 1")
        seen: dict[str, str] = {}
        ops: dict[str, OpSig] = {}
        for label, sigs in self.effects.items():
            if not label:
                raise SignatureError("empty effect label")
            if not sigs:
                raise SignatureError(f"effect {label} has no operations")
            for s in sigs:
                if s.label != label:
                    raise SignatureError(f"operation {s.name} filed under {label} but labelled {s.label}")
                if s.name in seen:
                    raise SignatureError(f"operation {s.name} declared twice ({seen[s.name]}, {label})")
                seen[s.name] = label
                ops[s.name] = s
        object.__setattr__(self, "effects", {k: tuple(v) for k, v in self.effects.items()})
        object.__setattr__(self, "_ops", ops)
        object.__setattr__(self, "bases", frozenset(self.bases) | BUILTIN_BASES)

    @classmethod
    def build(cls, ops: Iterable[OpSig], loss_dim: int = 1, bases: Iterable[str] = ()) -> Signature:
        effects: dict[str, list[OpSig]] = {}
        for s in ops:
            effects.setdefault(s.label, []).append(s)
        return cls({k: tuple(v) for k, v in effects.items()}, loss_dim, frozenset(bases))

    def op(self, name: str) -> OpSig | None:
        return self._ops.get(name)

    def ops_of(self, label: str) -> tuple[OpSig, ...]:
        return self.effects.get(label, ())

    def label_of(self, op: str) -> str | None:
        s = self._ops.get(op)
        return s.label if s else None

    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        return self is other


# ---------------------------------------------------------------------------
# Expressions


class Expr:
    """Base of all expression nodes.  The slots below are caches plus an optional source position."""

    __slots__ = ("_fv", "_isval", "_tycache", "_pos")

    def __str__(self):
        from .pretty import print_expr

        return print_expr(self)


def _node(cls):
    return dataclass(frozen=True, slots=True, repr=True)(cls)


@_node
class Const(Expr):
    value: object  # tuple of floats for loss, str for char/str, else a base literal
    ty: Type


@_node
class PrimApp(Expr):
    prim: str
    arg: Expr


@_node
class Var(Expr):
    name: str


@_node
class Lam(Expr):
    eff: Effect
    var: str
    var_ty: Type
    body: Expr


@_node
class App(Expr):
    fn: Expr
    arg: Expr


@_node
class Tuple(Expr):
    items: tuple[Expr, ...]


@_node
class Proj(Expr):
    expr: Expr
    index: int


@_node
class Inl(Expr):
    left_ty: Type
    right_ty: Type
    expr: Expr


@_node
class Inr(Expr):
    left_ty: Type
    right_ty: Type
    expr: Expr


@_node
class Cases(Expr):
    scrutinee: Expr
    x1: str
    ty1: Type
    e1: Expr
    x2: str
    ty2: Type
    e2: Expr


@_node
class Zero(Expr):
    pass


@_node
class Succ(Expr):
    expr: Expr


@_node
class Iter(Expr):
    n: Expr
    base: Expr
    step: Expr


@_node
class Nil(Expr):
    elem_ty: Type


@_node
class Cons(Expr):
    head: Expr
    tail: Expr


@_node
class Fold(Expr):
    lst: Expr
    base: Expr
    step: Expr


@_node
class OpCall(Expr):
    op: str
    arg: Expr


@_node
class Loss(Expr):
    arg: Expr


@dataclass(frozen=True, slots=True)
class Handler:
    label: str
    param_ty: Type
    op_clauses: tuple[tuple[str, Lam], ...]
    return_clause: Lam
    result_eff: Effect

    def clause(self, op: str) -> Lam | None:
        for name, lam in self.op_clauses:
            if name == op:
                return lam
        return None

    def handles(self, op: str) -> bool:
        return any(name == op for name, _ in self.op_clauses)

    @property
    def body_eff(self) -> Effect:
        return self.result_eff.add(self.label)


@_node
class Handle(Expr):
    handler: Handler
    param: Expr
    body: Expr


@_node
class Then(Expr):
    eff: Effect
    expr: Expr
    lam: Lam


class LossCont:
    """Syntactic loss continuations γ ::= λx.0 | λx. e ▷ γ."""

    __slots__ = ()

    def to_lam(self) -> Lam:
        raise NotImplementedError

    def __str__(self):
        from .pretty import print_expr

        return print_expr(self.to_lam())


@dataclass(frozen=True, slots=True)
class ZeroCont(LossCont):
    eff: Effect
    var_ty: Type
    dim: int = 1

    def to_lam(self) -> Lam:
        return Lam(self.eff, "_", self.var_ty, Const(zero_loss(self.dim), LOSS))


@dataclass(frozen=True, slots=True)
class ExtendCont(LossCont):
    eff: Effect
    var: str
    var_ty: Type
    body: Expr
    rest: LossCont

    def to_lam(self) -> Lam:
        return Lam(self.eff, self.var, self.var_ty, Then(self.eff, self.body, self.rest.to_lam()))


@dataclass(frozen=True, slots=True)
class LamCont(LossCont):
    """Fallback for loss continuations that are arbitrary loss-valued lambdas.

    User-written `then` lambdas become loss continuations through rules R7
    and S2 without being in the two-production grammar."""

    lam: Lam

    @property
    def eff(self) -> Effect:
        return self.lam.eff

    @property
    def var_ty(self) -> Type:
        return self.lam.var_ty

    def to_lam(self) -> Lam:
        return self.lam


def zero_loss(dim: int) -> tuple:
    return (0.0,) * dim


def cont_from_lam(lam: Lam) -> LossCont:
    """Recognise the loss-continuation grammar inside a lambda."""
    body = lam.body
    if isinstance(body, Const) and body.ty == LOSS and all(a == 0.0 for a in body.value) and lam.var not in fv(body):
        return ZeroCont(lam.eff, lam.var_ty, len(body.value))
    if isinstance(body, Then) and body.eff == lam.eff:
        rest = cont_from_lam(body.lam)
        return ExtendCont(lam.eff, lam.var, lam.var_ty, body.expr, rest)
    return LamCont(lam)


@_node
class GLocal(Expr):
    eff: Effect
    body: Expr
    cont: LossCont


@_node
class Reset(Expr):
    body: Expr


# ---------------------------------------------------------------------------
# Convenience constructors

UNIT_V = Tuple(())
TRUE = Inl(UNIT, UNIT, UNIT_V)
FALSE = Inr(UNIT, UNIT, UNIT_V)


def loss_const(*xs: float) -> Const:
    return Const(tuple(float(x) for x in xs), LOSS)


def char(c: str) -> Const:
    return Const(c, CHAR)


def string(s: str) -> Const:
    return Const(s, STR)


def nat(n: int) -> Expr:
    e: Expr = Zero()
    for _ in range(n):
        e = Succ(e)
    return e


def bool_v(b: bool) -> Expr:
    return TRUE if b else FALSE


def list_v(elem_ty: Type, items: Iterable[Expr]) -> Expr:
    e: Expr = Nil(elem_ty)
    for x in reversed(list(items)):
        e = Cons(x, e)
    return e


# ---------------------------------------------------------------------------
# Free variables, values, substitution


def _lossc_fv(c: LossCont) -> frozenset[str]:
    match c:
        case ZeroCont():
            return frozenset()
        case ExtendCont():
            return fv(c.to_lam())
        case LamCont(lam):
            return fv(lam)
    raise TypeError(c)


def handler_fv(h: Handler) -> frozenset[str]:
    acc = fv(h.return_clause)
    for _, lam in h.op_clauses:
        acc = acc | fv(lam)
    return acc


_EMPTY_FV: frozenset[str] = frozenset()


def fv(e: Expr) -> frozenset[str]:
    try:
        return e._fv
    except AttributeError:
        pass
    f = _FV.get(type(e))
    if f is None:
        raise TypeError(f"not an expression: {e!r}")
    r = f(e)
    object.__setattr__(e, "_fv", r)
    return r


def _fv_tuple(e):
    if not e.items:
        return _EMPTY_FV
    return frozenset().union(*[fv(i) for i in e.items])


_FV = {
    Const: lambda e: _EMPTY_FV, Zero: lambda e: _EMPTY_FV, Nil: lambda e: _EMPTY_FV,
    Var: lambda e: frozenset((e.name,)),
    PrimApp: lambda e: fv(e.arg), OpCall: lambda e: fv(e.arg), Loss: lambda e: fv(e.arg),
    Proj: lambda e: fv(e.expr), Inl: lambda e: fv(e.expr), Inr: lambda e: fv(e.expr), Succ: lambda e: fv(e.expr),
    Reset: lambda e: fv(e.body),
    Lam: lambda e: fv(e.body) - {e.var},
    App: lambda e: fv(e.fn) | fv(e.arg),
    Cons: lambda e: fv(e.head) | fv(e.tail),
    Tuple: _fv_tuple,
    Cases: lambda e: fv(e.scrutinee) | (fv(e.e1) - {e.x1}) | (fv(e.e2) - {e.x2}),
    Iter: lambda e: fv(e.n) | fv(e.base) | fv(e.step),
    Fold: lambda e: fv(e.lst) | fv(e.base) | fv(e.step),
    Handle: lambda e: handler_fv(e.handler) | fv(e.param) | fv(e.body),
    Then: lambda e: fv(e.expr) | fv(e.lam),
    GLocal: lambda e: fv(e.body) | _lossc_fv(e.cont),
}


def is_value(e: Expr) -> bool:
    try:
        return e._isval
    except AttributeError:
        pass
    t = type(e)
    if t is Const or t is Lam or t is Zero or t is Nil or t is Var:
        r = True
    elif t is Tuple:
        r = True
        for i in e.items:
            if not is_value(i):
                r = False
                break
    elif t is Inl or t is Inr or t is Succ:
        r = is_value(e.expr)
    elif t is Cons:
        r = is_value(e.head) and is_value(e.tail)
    else:
        r = False
    object.__setattr__(e, "_isval", r)
    return r


_fresh_counter = itertools.count(1)


def fresh(base: str, avoid: frozenset[str]) -> str:
    stem = base.split("__")[0] or "v"
    while True:
        cand = f"{stem}__{next(_fresh_counter)}"
        if cand not in avoid:
            return cand


def subst(e: Expr, v: Expr, x: str) -> Expr:
    """e[v/x], capture avoiding."""
    if x not in fv(e):
        return e
    return _subst(e, v, x, fv(v))


def _bind(x_bound: str, body: Expr, v: Expr, x: str, fvv: frozenset[str]) -> tuple[str, Expr]:
    """Substitute under a binder, renaming it when it would capture."""
    if x_bound == x or x not in fv(body):
        return x_bound, body
    if x_bound in fvv:
        y = fresh(x_bound, fvv | fv(body))
        body = _subst(body, Var(y), x_bound, frozenset((y,)))
        x_bound = y
    return x_bound, _subst(body, v, x, fvv)


def _subst(e: Expr, v: Expr, x: str, fvv: frozenset[str]) -> Expr:
    if x not in fv(e):
        return e
    f = _SUBST.get(type(e))
    if f is None:
        raise TypeError(f"cannot substitute into {e!r}")
    return f(e, v, x, fvv)


def _s_lam(e, v, x, fvv):
    y, b = _bind(e.var, e.body, v, x, fvv)
    return Lam(e.eff, y, e.var_ty, b)


def _s_cases(e, v, x, fvv):
    x1, e1 = _bind(e.x1, e.e1, v, x, fvv)
    x2, e2 = _bind(e.x2, e.e2, v, x, fvv)
    return Cases(_subst(e.scrutinee, v, x, fvv), x1, e.ty1, e1, x2, e.ty2, e2)


_SUBST = {
    Var: lambda e, v, x, fvv: v,
    PrimApp: lambda e, v, x, fvv: PrimApp(e.prim, _subst(e.arg, v, x, fvv)),
    Lam: _s_lam,
    App: lambda e, v, x, fvv: App(_subst(e.fn, v, x, fvv), _subst(e.arg, v, x, fvv)),
    Tuple: lambda e, v, x, fvv: Tuple(tuple([_subst(i, v, x, fvv) for i in e.items])),
    Proj: lambda e, v, x, fvv: Proj(_subst(e.expr, v, x, fvv), e.index),
    Inl: lambda e, v, x, fvv: Inl(e.left_ty, e.right_ty, _subst(e.expr, v, x, fvv)),
    Inr: lambda e, v, x, fvv: Inr(e.left_ty, e.right_ty, _subst(e.expr, v, x, fvv)),
    Cases: _s_cases,
    Succ: lambda e, v, x, fvv: Succ(_subst(e.expr, v, x, fvv)),
    Iter: lambda e, v, x, fvv: Iter(_subst(e.n, v, x, fvv), _subst(e.base, v, x, fvv), _subst(e.step, v, x, fvv)),
    Cons: lambda e, v, x, fvv: Cons(_subst(e.head, v, x, fvv), _subst(e.tail, v, x, fvv)),
    Fold: lambda e, v, x, fvv: Fold(_subst(e.lst, v, x, fvv), _subst(e.base, v, x, fvv), _subst(e.step, v, x, fvv)),
    OpCall: lambda e, v, x, fvv: OpCall(e.op, _subst(e.arg, v, x, fvv)),
    Loss: lambda e, v, x, fvv: Loss(_subst(e.arg, v, x, fvv)),
    Handle: lambda e, v, x, fvv: Handle(subst_handler(e.handler, v, x, fvv), _subst(e.param, v, x, fvv),
                                        _subst(e.body, v, x, fvv)),
    Then: lambda e, v, x, fvv: Then(e.eff, _subst(e.expr, v, x, fvv), _subst(e.lam, v, x, fvv)),
    GLocal: lambda e, v, x, fvv: GLocal(e.eff, _subst(e.body, v, x, fvv), _subst_cont(e.cont, v, x, fvv)),
    Reset: lambda e, v, x, fvv: Reset(_subst(e.body, v, x, fvv)),
}


def subst_handler(h: Handler, v: Expr, x: str, fvv: frozenset[str] | None = None) -> Handler:
    if x not in handler_fv(h):
        return h
    fvv = fv(v) if fvv is None else fvv
    return Handler(
        h.label,
        h.param_ty,
        tuple((name, _subst(lam, v, x, fvv)) for name, lam in h.op_clauses),
        _subst(h.return_clause, v, x, fvv),
        h.result_eff,
    )


def _subst_cont(c: LossCont, v: Expr, x: str, fvv: frozenset[str]) -> LossCont:
    if x not in _lossc_fv(c):
        return c
    match c:
        case ExtendCont():
            return cont_from_lam(_subst(c.to_lam(), v, x, fvv))
        case LamCont(lam):
            return LamCont(_subst(lam, v, x, fvv))
    return c


# ---------------------------------------------------------------------------
# Frames and continuation contexts


class Frame:
    __slots__ = ()
    special = False

    def plug(self, e: Expr) -> Expr:
        raise NotImplementedError


def _frame(cls):
    return dataclass(frozen=True, slots=True)(cls)


@_frame
class FPrim(Frame):
    prim: str

    def plug(self, e):
        return PrimApp(self.prim, e)


@_frame
class FTuple(Frame):
    done: tuple[Expr, ...]
    rest: tuple[Expr, ...]

    def plug(self, e):
        return Tuple(self.done + (e,) + self.rest)


@_frame
class FProj(Frame):
    index: int

    def plug(self, e):
        return Proj(e, self.index)


@_frame
class FInl(Frame):
    left_ty: Type
    right_ty: Type

    def plug(self, e):
        return Inl(self.left_ty, self.right_ty, e)


@_frame
class FInr(Frame):
    left_ty: Type
    right_ty: Type

    def plug(self, e):
        return Inr(self.left_ty, self.right_ty, e)


@_frame
class FCases(Frame):
    x1: str
    ty1: Type
    e1: Expr
    x2: str
    ty2: Type
    e2: Expr

    def plug(self, e):
        return Cases(e, self.x1, self.ty1, self.e1, self.x2, self.ty2, self.e2)


@_frame
class FSucc(Frame):
    def plug(self, e):
        return Succ(e)


@_frame
class FIter0(Frame):
    base: Expr
    step: Expr

    def plug(self, e):
        return Iter(e, self.base, self.step)


@_frame
class FIter1(Frame):
    n: Expr
    step: Expr

    def plug(self, e):
        return Iter(self.n, e, self.step)


@_frame
class FIter2(Frame):
    n: Expr
    base: Expr

    def plug(self, e):
        return Iter(self.n, self.base, e)


@_frame
class FCons0(Frame):
    tail: Expr

    def plug(self, e):
        return Cons(e, self.tail)


@_frame
class FCons1(Frame):
    head: Expr

    def plug(self, e):
        return Cons(self.head, e)


@_frame
class FFold0(Frame):
    base: Expr
    step: Expr

    def plug(self, e):
        return Fold(e, self.base, self.step)


@_frame
class FFold1(Frame):
    lst: Expr
    step: Expr

    def plug(self, e):
        return Fold(self.lst, e, self.step)


@_frame
class FFold2(Frame):
    lst: Expr
    base: Expr

    def plug(self, e):
        return Fold(self.lst, self.base, e)


@_frame
class FAppFn(Frame):
    arg: Expr

    def plug(self, e):
        return App(e, self.arg)


@_frame
class FAppArg(Frame):
    fn: Expr

    def plug(self, e):
        return App(self.fn, e)


@_frame
class FOp(Frame):
    op: str

    def plug(self, e):
        return OpCall(self.op, e)


@_frame
class FLoss(Frame):
    def plug(self, e):
        return Loss(e)


@_frame
class FHandleParam(Frame):
    handler: Handler
    body: Expr

    def plug(self, e):
        return Handle(self.handler, e, self.body)


@_frame
class SHandle(Frame):
    handler: Handler
    param: Expr
    special = True

    def plug(self, e):
        return Handle(self.handler, self.param, e)


@_frame
class SThen(Frame):
    eff: Effect
    lam: Lam
    special = True

    def plug(self, e):
        return Then(self.eff, e, self.lam)


@_frame
class SGLocal(Frame):
    eff: Effect
    cont: LossCont
    special = True

    def plug(self, e):
        return GLocal(self.eff, e, self.cont)


@_frame
class SReset(Frame):
    special = True

    def plug(self, e):
        return Reset(e)


ContContext = tuple  # tuple[Frame, ...], outermost first


def plug(K: Iterable[Frame], e: Expr) -> Expr:
    for f in reversed(tuple(K)):
        e = f.plug(e)
    return e


def frame_ambient(f: Frame) -> Effect | None:
    """Ambient effect that a special frame imposes on its hole, if any."""
    if isinstance(f, SHandle):
        return f.handler.body_eff
    if isinstance(f, SGLocal):
        return f.eff
    return None


def hole_ambient(K: tuple[Frame, ...]) -> Effect | None:
    for f in reversed(K):
        amb = frame_ambient(f)
        if amb is not None:
            return amb
    return None


def catcher_index(K: tuple[Frame, ...], op: str, top: Effect | None = None) -> int | None:
    """Position in K of the handler frame that catches `op` at the hole.

    The depth index of an operation is its label's count in the ambient
    effect of the hole; it is caught by the innermost handler frame for its
    label whose own index (result count plus one) equals it."""
    amb = hole_ambient(K)
    if amb is None:
        amb = top
    label = None
    for j in range(len(K) - 1, -1, -1):
        f = K[j]
        if isinstance(f, SHandle) and f.handler.handles(op):
            label = f.handler.label
            if amb is None or f.handler.result_eff.count(label) + 1 == amb.count(label):
                return j
    return None


def handled_ops(K: Iterable[Frame]) -> frozenset[str]:
    K = tuple(K)
    amb = hole_ambient(K)
    acc: set[str] = set()
    for f in K:
        if isinstance(f, SHandle):
            h = f.handler
            if amb is None or h.result_eff.count(h.label) + 1 == amb.count(h.label):
                acc.update(name for name, _ in h.op_clauses)
    return frozenset(acc)


# ---------------------------------------------------------------------------
# Expression analysis


@dataclass(frozen=True, slots=True)
class IsValue:
    value: Expr


@dataclass(frozen=True, slots=True)
class IsStuck:
    K: tuple[Frame, ...]
    op: str
    arg: Expr


@dataclass(frozen=True, slots=True)
class IsRedex:
    tag: str


@dataclass(frozen=True, slots=True)
class InRegularFrame:
    frame: Frame
    expr: Expr


@dataclass(frozen=True, slots=True)
class InSpecialFrame:
    frame: Frame
    expr: Expr


class IllFormed(Exception):
    pass


_VALUE = ("value",)


def _split_prim(e):
    return ("redex", "R1") if is_value(e.arg) else ("frame", FPrim(e.prim), e.arg)


def _split_app(e):
    if not is_value(e.fn):
        return ("frame", FAppFn(e.arg), e.fn)
    if not is_value(e.arg):
        return ("frame", FAppArg(e.fn), e.arg)
    return ("redex", "R3")


def _split_tuple(e):
    items = e.items
    for k, it in enumerate(items):
        if not is_value(it):
            return ("frame", FTuple(items[:k], items[k + 1:]), it)
    return _VALUE


def _split_proj(e):
    return ("redex", "R2") if is_value(e.expr) else ("frame", FProj(e.index), e.expr)


def _split_inl(e):
    return _VALUE if is_value(e.expr) else ("frame", FInl(e.left_ty, e.right_ty), e.expr)


def _split_inr(e):
    return _VALUE if is_value(e.expr) else ("frame", FInr(e.left_ty, e.right_ty), e.expr)


def _split_cases(e):
    if is_value(e.scrutinee):
        return ("redex", "Rcase")
    return ("frame", FCases(e.x1, e.ty1, e.e1, e.x2, e.ty2, e.e2), e.scrutinee)


def _split_succ(e):
    return _VALUE if is_value(e.expr) else ("frame", FSucc(), e.expr)


def _split_iter(e):
    if not is_value(e.n):
        return ("frame", FIter0(e.base, e.step), e.n)
    if not is_value(e.base):
        return ("frame", FIter1(e.n, e.step), e.base)
    if not is_value(e.step):
        return ("frame", FIter2(e.n, e.base), e.step)
    return ("redex", "Riter")


def _split_cons(e):
    if not is_value(e.head):
        return ("frame", FCons0(e.tail), e.head)
    if not is_value(e.tail):
        return ("frame", FCons1(e.head), e.tail)
    return _VALUE


def _split_fold(e):
    if not is_value(e.lst):
        return ("frame", FFold0(e.base, e.step), e.lst)
    if not is_value(e.base):
        return ("frame", FFold1(e.lst, e.step), e.base)
    if not is_value(e.step):
        return ("frame", FFold2(e.lst, e.base), e.step)
    return ("redex", "Rfold")


def _split_op(e):
    return ("op", e.op, e.arg) if is_value(e.arg) else ("frame", FOp(e.op), e.arg)


def _split_loss(e):
    return ("redex", "R4") if is_value(e.arg) else ("frame", FLoss(), e.arg)


def _split_handle(e):
    if not is_value(e.param):
        return ("frame", FHandleParam(e.handler, e.body), e.param)
    if is_value(e.body):
        return ("redex", "R6")
    return ("frame", SHandle(e.handler, e.param), e.body)


def _split_then(e):
    return ("redex", "R7") if is_value(e.expr) else ("frame", SThen(e.eff, e.lam), e.expr)


def _split_glocal(e):
    return ("redex", "R8") if is_value(e.body) else ("frame", SGLocal(e.eff, e.cont), e.body)


def _split_reset(e):
    return ("redex", "R9") if is_value(e.body) else ("frame", SReset(), e.body)


def _split_var(e):
    raise IllFormed(f"free variable {e.name}")


def _split_value(e):
    return _VALUE


_SPLIT = {
    Const: _split_value, Lam: _split_value, Zero: _split_value, Nil: _split_value, Var: _split_var,
    PrimApp: _split_prim, App: _split_app, Tuple: _split_tuple, Proj: _split_proj, Inl: _split_inl,
    Inr: _split_inr, Cases: _split_cases, Succ: _split_succ, Iter: _split_iter, Cons: _split_cons,
    Fold: _split_fold, OpCall: _split_op, Loss: _split_loss, Handle: _split_handle, Then: _split_then,
    GLocal: _split_glocal, Reset: _split_reset,
}


def split(e: Expr):
    """One level of decomposition.

    Returns ("value",), ("redex", tag), ("op", op, v) or ("frame", F, sub)."""
    f = _SPLIT.get(type(e))
    if f is None:
        raise IllFormed(f"not an expression: {e!r}")
    return f(e)


def decompose(e: Expr):
    """Descend to the evaluation position.

    Returns (frames, leaf) with leaf one of the `split` results other than
    "frame"; frames are outermost first."""
    frames: list[Frame] = []
    cur = e
    while True:
        s = split(cur)
        if s[0] == "frame":
            frames.append(s[1])
            cur = s[2]
            continue
        return frames, s


def analyze(e: Expr) -> IsValue | IsStuck | IsRedex | InRegularFrame | InSpecialFrame:
    frames, leaf = decompose(e)
    if not frames:
        if leaf[0] == "value":
            return IsValue(e)
        if leaf[0] == "redex":
            return IsRedex(leaf[1])
        return IsStuck((), leaf[1], leaf[2])
    if leaf[0] == "op":
        K = tuple(frames)
        j = catcher_index(K, leaf[1])
        if j is None:
            return IsStuck(K, leaf[1], leaf[2])
        if j == 0:
            return IsRedex("R5")
    _, head, sub = split(e)
    if head.special:
        return InSpecialFrame(head, sub)
    return InRegularFrame(head, sub)


def direct_child(e: Expr) -> tuple[Frame, Expr]:
    """The frame and sub-expression at the top of a non-value, non-redex e."""
    s = split(e)
    if s[0] != "frame":
        raise IllFormed("no frame at the top")
    return s[1], s[2]
