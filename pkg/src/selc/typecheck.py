"""Type-and-effect checking and the well-foundedness analysis.

The internal judgment `_infer` returns the type together with the least
effect the expression needs (`lo`) and, when some subterm pins the ambient
effect exactly (an application, a handler, a `then`), that exact effect.
Values never pin anything, which is how "values check at any ε" is
realised without guessing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

from .prims import prims_for
from .syntax import (
    EMPTY,
    LOSS,
    NAT,
    App,
    Base,
    Cases,
    Const,
    Cons,
    Effect,
    Expr,
    ExtendCont,
    Fn,
    Fold,
    GLocal,
    Handle,
    Handler,
    Inl,
    Inr,
    Iter,
    Lam,
    LamCont,
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
    Signature,
    Succ,
    Sum,
    Then,
    Tuple,
    Type,
    Var,
    Zero,
    ZeroCont,
    fv,
)


class TypeCheckError(Exception):
    """A violated typing rule.  `rule` names the rule."""

    def __init__(self, rule: str, message: str, expected=None, found=None, position=None):
        self.rule = rule
        self.message = message
        self.expected = expected
        self.found = found
        self.position = position
        super().__init__(f"{rule}: {message}")


TypeError = TypeCheckError  # public alias; shadows the builtin in this module only


class MissingClause(TypeCheckError):
    pass


class ExtraClause(TypeCheckError):
    pass


class ClauseType(TypeCheckError):
    pass


class NotWellFounded(UserWarning):
    pass


@dataclass(frozen=True)
class HandlerType:
    param_ty: Type
    body_ty: Type
    body_eff: Effect
    result_ty: Type
    result_eff: Effect
    label: str


TypeEnv = Mapping[str, Type]
_EMPTY_ENV: TypeEnv = MappingProxyType({})


def _pos(e) -> object:
    return getattr(e, "_pos", None)


def _fail(rule: str, msg: str, e=None, expected=None, found=None):
    raise TypeCheckError(rule, msg, expected, found, _pos(e) if e is not None else None)


def _combine(rule: str, e: Expr, *parts: tuple[Effect, Effect | None]) -> tuple[Effect, Effect | None]:
    lo = EMPTY
    exact: Effect | None = None
    for plo, pex in parts:
        lo = lo.join(plo)
        if pex is not None:
            if exact is not None and exact != pex:
                _fail(rule, f"effect {pex!r} conflicts with {exact!r}", e, exact, pex)
            exact = pex
    if exact is not None and not lo.sub(exact):
        _fail(rule, f"needs effect {lo!r} but is fixed to {exact!r}", e, exact, lo)
    return lo, exact


def _within(rule: str, e: Expr, need: tuple[Effect, Effect | None], eff: Effect):
    lo, ex = need
    if not lo.sub(eff):
        _fail(rule, f"needs effect {lo!r}, not within {eff!r}", e, eff, lo)
    if ex is not None and ex != eff:
        _fail(rule, f"fixed to effect {ex!r} but checked at {eff!r}", e, eff, ex)


class Checker:
    def __init__(self, sig: Signature):
        self.sig = sig
        self.prims = prims_for(sig.loss_dim)

    # -- well-formedness of types

    def check_type(self, ty: Type, where=None) -> None:
        match ty:
            case Base(name):
                if name not in self.sig.bases:
                    _fail("type", f"unknown base type {name}", where)
            case Product(items):
                for t in items:
                    self.check_type(t, where)
            case Sum(a, b):
                self.check_type(a, where)
                self.check_type(b, where)
            case Nat():
                pass
            case ListT(a):
                self.check_type(a, where)
            case Fn(a, b, eff):
                self.check_type(a, where)
                self.check_type(b, where)
                for label in eff.labels():
                    if label not in self.sig.effects:
                        _fail("type", f"unknown effect label {label}", where)

    def check_effect(self, eff: Effect, where=None) -> None:
        for label in eff.labels():
            if label not in self.sig.effects:
                _fail("type", f"unknown effect label {label}", where)

    # -- the judgment

    def infer(self, env: TypeEnv, e: Expr) -> tuple[Type, Effect, Effect | None]:
        closed = not fv(e)
        if closed:
            cached = getattr(e, "_tycache", None)
            if cached is not None and cached[0] is self.sig:
                return cached[1]
        res = self._infer(env, e)
        if closed:
            object.__setattr__(e, "_tycache", (self.sig, res))
        return res

    def _infer(self, env: TypeEnv, e: Expr) -> tuple[Type, Effect, Effect | None]:
        match e:
            case Const(value, ty):
                self._check_literal(value, ty, e)
                return ty, EMPTY, None
            case Var(x):
                if x not in env:
                    _fail("var", f"unbound variable {x}", e)
                return env[x], EMPTY, None
            case PrimApp(p, a):
                prim = self.prims.get(p)
                if prim is None:
                    _fail("prim", f"unknown primitive {p}", e)
                ta, lo, ex = self.infer(env, a)
                if ta != prim.arg_ty:
                    _fail("prim", f"{p} expects {prim.arg_ty}, got {ta}", e, prim.arg_ty, ta)
                return prim.res_ty, lo, ex
            case Lam(eff, x, ty, body):
                self.check_type(ty, e)
                self.check_effect(eff, e)
                tb, lo, ex = self.infer(_extend(env, x, ty), body)
                _within("abs", e, (lo, ex), eff)
                return Fn(ty, tb, eff), EMPTY, None
            case App(f, a):
                tf, lof, exf = self.infer(env, f)
                if not isinstance(tf, Fn):
                    _fail("app", f"applying a non-function of type {tf}", e, "function", tf)
                ta, loa, exa = self.infer(env, a)
                if ta != tf.arg:
                    _fail("app", f"argument type {ta} does not match {tf.arg}", e, tf.arg, ta)
                lo, ex = _combine("app", e, (lof, exf), (loa, exa), (tf.eff, tf.eff))
                return tf.res, lo, ex
            case Tuple(items):
                tys, parts = [], []
                for it in items:
                    t, lo, ex = self.infer(env, it)
                    tys.append(t)
                    parts.append((lo, ex))
                lo, ex = _combine("prd", e, *parts)
                return Product(tuple(tys)), lo, ex
            case Proj(a, i):
                ta, lo, ex = self.infer(env, a)
                if not isinstance(ta, Product) or not 0 <= i < len(ta.items):
                    _fail("prj", f"cannot project component {i} of {ta}", e, "product", ta)
                return ta.items[i], lo, ex
            case Inl(lt, rt, a) | Inr(lt, rt, a):
                self.check_type(lt, e)
                self.check_type(rt, e)
                ta, lo, ex = self.infer(env, a)
                want = lt if isinstance(e, Inl) else rt
                rule = "inl" if isinstance(e, Inl) else "inr"
                if ta != want:
                    _fail(rule, f"injected {ta}, annotation says {want}", e, want, ta)
                return Sum(lt, rt), lo, ex
            case Cases(s, x1, t1, e1, x2, t2, e2):
                ts, los, exs = self.infer(env, s)
                if ts != Sum(t1, t2):
                    _fail("cases", f"scrutinee of type {ts}, branches bind {t1} and {t2}", e, Sum(t1, t2), ts)
                ty1, lo1, ex1 = self.infer(_extend(env, x1, t1), e1)
                ty2, lo2, ex2 = self.infer(_extend(env, x2, t2), e2)
                if ty1 != ty2:
                    _fail("cases", f"branches have types {ty1} and {ty2}", e, ty1, ty2)
                lo, ex = _combine("cases", e, (los, exs), (lo1, ex1), (lo2, ex2))
                return ty1, lo, ex
            case Zero():
                return NAT, EMPTY, None
            case Succ(a):
                ta, lo, ex = self.infer(env, a)
                if ta != NAT:
                    _fail("succ", f"successor of {ta}", e, NAT, ta)
                return NAT, lo, ex
            case Iter(n, b, s):
                tn, lon, exn = self.infer(env, n)
                if tn != NAT:
                    _fail("iter", f"iteration count of type {tn}", e, NAT, tn)
                tb, lob, exb = self.infer(env, b)
                ts, los, exs = self.infer(env, s)
                if ts != Fn(tb, tb, getattr(ts, "eff", EMPTY)):
                    _fail("iter", f"step of type {ts} for accumulator {tb}", e, Fn(tb, tb, EMPTY), ts)
                lo, ex = _combine("iter", e, (lon, exn), (lob, exb), (los, exs), (ts.eff, ts.eff))
                return tb, lo, ex
            case Nil(t):
                self.check_type(t, e)
                return ListT(t), EMPTY, None
            case Cons(h, t):
                th, loh, exh = self.infer(env, h)
                tt, lot, ext = self.infer(env, t)
                if tt != ListT(th):
                    _fail("cons", f"cons of {th} onto {tt}", e, ListT(th), tt)
                lo, ex = _combine("cons", e, (loh, exh), (lot, ext))
                return tt, lo, ex
            case Fold(l, b, s):
                tl, lol, exl = self.infer(env, l)
                if not isinstance(tl, ListT):
                    _fail("fold", f"folding over {tl}", e, "list", tl)
                tb, lob, exb = self.infer(env, b)
                ts, los, exs = self.infer(env, s)
                want = Fn(Product((tl.elem, tb)), tb, getattr(ts, "eff", EMPTY))
                if ts != want:
                    _fail("fold", f"step of type {ts}, expected {want}", e, want, ts)
                lo, ex = _combine("fold", e, (lol, exl), (lob, exb), (los, exs), (ts.eff, ts.eff))
                return tb, lo, ex
            case OpCall(op, a):
                s = self.sig.op(op)
                if s is None:
                    _fail("op", f"unknown operation {op}", e)
                ta, lo, ex = self.infer(env, a)
                if ta != s.out_ty:
                    _fail("op", f"{op} expects {s.out_ty}, got {ta}", e, s.out_ty, ta)
                lo, ex = _combine("op", e, (lo, ex), (Effect.of(s.label), None))
                return s.in_ty, lo, ex
            case Loss(a):
                ta, lo, ex = self.infer(env, a)
                if ta != LOSS:
                    _fail("loss", f"loss of a {ta}", e, LOSS, ta)
                return Product(()), lo, ex
            case Handle(h, p, b):
                ht = self.check_handler(env, h)
                tp, lop, exp = self.infer(env, p)
                if tp != ht.param_ty:
                    _fail("handle", f"parameter of type {tp}, handler wants {ht.param_ty}", e, ht.param_ty, tp)
                tb, lob, exb = self.infer(env, b)
                if tb != ht.body_ty:
                    _fail("handle", f"body of type {tb}, handler wants {ht.body_ty}", e, ht.body_ty, tb)
                _within("handle", e, (lob, exb), ht.body_eff)
                lo, ex = _combine("handle", e, (lop, exp), (ht.result_eff, ht.result_eff))
                return ht.result_ty, lo, ex
            case Then(eff, a, lam):
                self.check_effect(eff, e)
                ta, loa, exa = self.infer(env, a)
                _within("then", e, (loa, exa), eff)
                self._check_loss_lam("then", env, lam, ta, eff, e)
                return LOSS, eff, eff
            case GLocal(eff, b, c):
                self.check_effect(eff, e)
                tb, lob, exb = self.infer(env, b)
                _within("glocal", e, (lob, exb), eff)
                self._check_loss_lam("glocal", env, self._cont_lam(c), tb, eff, e)
                return tb, eff, None
            case Reset(b):
                return self.infer(env, b)
        raise TypeCheckError("syntax", f"not an expression: {e!r}")

    def _cont_lam(self, c: LossCont) -> Lam:
        if not isinstance(c, (ZeroCont, ExtendCont, LamCont)):
            _fail("glocal", f"not a loss continuation: {c!r}")
        return c.to_lam()

    def _check_loss_lam(self, rule: str, env: TypeEnv, lam: Lam, arg_ty: Type, eff: Effect, where: Expr) -> None:
        if not isinstance(lam, Lam):
            _fail(rule, "loss continuation must be a lambda", where)
        if lam.var_ty != arg_ty:
            _fail(rule, f"loss continuation binds {lam.var_ty}, expression has type {arg_ty}", where, arg_ty, lam.var_ty)
        if not lam.eff.sub(eff):
            _fail(rule, f"loss continuation effect {lam.eff!r} exceeds {eff!r}", where, eff, lam.eff)
        tl, _, _ = self.infer(env, lam)
        if tl.res != LOSS:
            _fail(rule, f"loss continuation returns {tl.res}", where, LOSS, tl.res)

    def _check_literal(self, value, ty: Type, e: Expr) -> None:
        match ty:
            case Base("loss"):
                ok = isinstance(value, tuple) and len(value) == self.sig.loss_dim and all(isinstance(x, float) for x in value)
                if not ok:
                    _fail("const", f"loss literal {value!r} is not a {self.sig.loss_dim}-vector", e)
            case Base("char"):
                if not (isinstance(value, str) and len(value) == 1):
                    _fail("const", f"bad char literal {value!r}", e)
            case Base("str"):
                if not isinstance(value, str):
                    _fail("const", f"bad string literal {value!r}", e)
            case Base(name):
                if name not in self.sig.bases:
                    _fail("const", f"unknown base type {name}", e)
            case _:
                _fail("const", f"constants must have base type, not {ty}", e)

    # -- handlers

    def check_handler(self, env: TypeEnv, h: Handler) -> HandlerType:
        sig = self.sig
        if h.label not in sig.effects:
            _fail("handler", f"unknown effect label {h.label}")
        self.check_type(h.param_ty)
        self.check_effect(h.result_eff)
        declared = [s.name for s in sig.ops_of(h.label)]
        given = [name for name, _ in h.op_clauses]
        for name in declared:
            if name not in given:
                raise MissingClause("handler", f"no clause for {name} of {h.label}")
        for name in given:
            if name not in declared:
                raise ExtraClause("handler", f"{name} is not an operation of {h.label}")
        if len(set(given)) != len(given):
            raise ExtraClause("handler", "duplicate operation clause")
        eps = h.result_eff
        ret = h.return_clause
        if not isinstance(ret, Lam) or not isinstance(ret.var_ty, Product) or len(ret.var_ty.items) != 2:
            raise ClauseType("handler", "return clause must bind a (parameter, value) pair")
        if ret.var_ty.items[0] != h.param_ty:
            raise ClauseType("handler", f"return clause parameter {ret.var_ty.items[0]} is not {h.param_ty}")
        if ret.eff != eps:
            raise ClauseType("handler", f"return clause effect {ret.eff!r} is not {eps!r}")
        sigma = ret.var_ty.items[1]
        try:
            tr, _, _ = self.infer(env, ret)
        except TypeCheckError as err:
            raise ClauseType("handler", f"return clause: {err}") from err
        sigma2 = tr.res
        for s in sig.ops_of(h.label):
            lam = h.clause(s.name)
            want = Product((
                h.param_ty,
                s.out_ty,
                Fn(Product((h.param_ty, s.in_ty)), LOSS, eps),
                Fn(Product((h.param_ty, s.in_ty)), sigma2, eps),
            ))
            if not isinstance(lam, Lam) or lam.var_ty != want:
                raise ClauseType("handler", f"clause {s.name} must bind {want}", want, getattr(lam, "var_ty", None))
            if lam.eff != eps:
                raise ClauseType("handler", f"clause {s.name} effect {lam.eff!r} is not {eps!r}")
            try:
                tc, _, _ = self.infer(env, lam)
            except TypeCheckError as err:
                raise ClauseType("handler", f"clause {s.name}: {err}") from err
            if tc.res != sigma2:
                raise ClauseType("handler", f"clause {s.name} returns {tc.res}, return clause {sigma2}", sigma2, tc.res)
        return HandlerType(h.param_ty, sigma, h.body_eff, sigma2, eps, h.label)


def _extend(env: TypeEnv, x: str, ty: Type) -> TypeEnv:
    d = dict(env)
    d[x] = ty
    return MappingProxyType(d)


_CHECKERS: dict[int, Checker] = {}


def checker(sig: Signature) -> Checker:
    c = _CHECKERS.get(id(sig))
    if c is None or c.sig is not sig:
        c = _CHECKERS[id(sig)] = Checker(sig)
    return c


def infer(env: TypeEnv | None, e: Expr, sig: Signature) -> tuple[Type, Effect]:
    """Type and minimal effect of e.  Raises TypeError."""
    ty, lo, ex = checker(sig).infer(env or _EMPTY_ENV, e)
    return ty, (ex if ex is not None else lo)


def infer_full(env: TypeEnv | None, e: Expr, sig: Signature) -> tuple[Type, Effect, Effect | None]:
    return checker(sig).infer(env or _EMPTY_ENV, e)


def check(env: TypeEnv | None, e: Expr, ty: Type, eff: Effect, sig: Signature) -> None:
    """Validate Γ ⊢ e : σ ! ε.  Raises TypeError."""
    t, lo, ex = checker(sig).infer(env or _EMPTY_ENV, e)
    if t != ty:
        _fail("check", f"expression has type {t}, expected {ty}", e, ty, t)
    _within("check", e, (lo, ex), eff)


def checks(env: TypeEnv | None, e: Expr, ty: Type, eff: Effect, sig: Signature) -> bool:
    try:
        check(env, e, ty, eff, sig)
    except TypeCheckError:
        return False
    return True


def check_handler(env: TypeEnv | None, h: Handler, sig: Signature) -> HandlerType:
    return checker(sig).check_handler(env or _EMPTY_ENV, h)


def check_loss_cont(c: LossCont, arg_ty: Type, eff: Effect, sig: Signature) -> None:
    """A loss continuation γ : σ → loss ! ε' with ε' ⊆ ε."""
    ch = checker(sig)
    ch._check_loss_lam("glocal", _EMPTY_ENV, ch._cont_lam(c), arg_ty, eff, None)


# ---------------------------------------------------------------------------
# Well-foundedness


@dataclass(frozen=True)
class WfOrdering:
    order: tuple[str, ...]

    def index(self, label: str) -> int:
        return self.order.index(label) + 1


@dataclass(frozen=True)
class CycleWitness:
    cycle: tuple[str, ...]

    def __str__(self):
        return " -> ".join(self.cycle + self.cycle[:1])


def labels_in(ty: Type) -> set[str]:
    match ty:
        case Product(items):
            return set().union(*(labels_in(t) for t in items)) if items else set()
        case Sum(a, b):
            return labels_in(a) | labels_in(b)
        case ListT(a):
            return labels_in(a)
        case Fn(a, b, eff):
            return labels_in(a) | labels_in(b) | set(eff.labels())
        case _:
            return set()


def dependencies(sig: Signature) -> dict[str, set[str]]:
    deps: dict[str, set[str]] = {}
    for label, ops in sig.effects.items():
        acc: set[str] = set()
        for s in ops:
            acc |= labels_in(s.out_ty) | labels_in(s.in_ty)
        deps[label] = acc
    return deps


def check_wellfounded(sig: Signature) -> WfOrdering | CycleWitness:
    """Topologically order labels so op types mention only earlier labels."""
    deps = dependencies(sig)
    order: list[str] = []
    state: dict[str, int] = {}  # 1 visiting, 2 done
    stack: list[str] = []

    def visit(label: str) -> CycleWitness | None:
        state[label] = 1
        stack.append(label)
        for d in sorted(deps.get(label, ())):
            if d not in deps:
                continue
            st = state.get(d, 0)
            if st == 1:
                return CycleWitness(tuple(stack[stack.index(d):]))
            if st == 0:
                w = visit(d)
                if w is not None:
                    return w
        stack.pop()
        state[label] = 2
        order.append(label)
        return None

    for label in sig.effects:
        if state.get(label, 0) == 0:
            w = visit(label)
            if w is not None:
                return w
    return WfOrdering(tuple(order))


def warn_if_not_wellfounded(sig: Signature) -> CycleWitness | None:
    res = check_wellfounded(sig)
    if isinstance(res, CycleWitness):
        warnings.warn(f"signature not well-founded: cycle {res}", NotWellFounded, stacklevel=2)
        return res
    return None


def effect_level(eff: Effect, ord: WfOrdering) -> int:
    return max((ord.index(label) for label in eff.labels()), default=0)


def type_level(ty: Type, ord: WfOrdering) -> int:
    match ty:
        case Product(items):
            return max((type_level(t, ord) for t in items), default=0)
        case Sum(a, b):
            return max(type_level(a, ord), type_level(b, ord))
        case ListT(a):
            return type_level(a, ord)
        case Fn(a, b, eff):
            return max(type_level(a, ord), type_level(b, ord), effect_level(eff, ord))
        case _:
            return 0


def type_size(ty: Type) -> int:
    match ty:
        case Product(items):
            return 1 + sum(type_size(t) for t in items)
        case Sum(a, b):
            return 1 + type_size(a) + type_size(b)
        case ListT(a):
            return 1 + type_size(a)
        case Fn(a, b, eff):
            return 1 + type_size(a) + type_size(b) + eff.total()
        case _:
            return 1
