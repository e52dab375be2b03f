"""Operational semantics: the loss-continuation small-step relation
γ ⊢_ε e →^r e', big-step evaluation and giant-step evaluation.

`step` is the reference transcription of the rules and reports the
derivation path (for example "F/S2/R4": a regular frame, then a `then`
frame, then a loss redex).  `big_eval` runs a frame-stack machine that takes
exactly the same steps without re-decomposing the term each time; the
conformance tests check the two against each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from . import loss as L
from . import typecheck as tc
from .prims import prims_for
from .syntax import (
    _SPLIT,
    LOSS,
    UNIT_V,
    App,
    Cases,
    Cons,
    Const,
    Effect,
    Expr,
    ExtendCont,
    FHandleParam,
    FPrim,
    FTuple,
    Fold,
    Frame,
    GLocal,
    Handle,
    Handler,
    IllFormed,
    Inl,
    Inr,
    Iter,
    Lam,
    Loss,
    LossCont,
    Nil,
    OpCall,
    PrimApp,
    Product,
    Proj,
    Reset,
    SGLocal,
    SHandle,
    Signature,
    SReset,
    SThen,
    Succ,
    Then,
    Tuple,
    Type,
    Var,
    Zero,
    ZeroCont,
    catcher_index,
    cont_from_lam,
    decompose,
    frame_ambient,
    fv,
    hole_ambient,
    plug,
    split,
    subst,
)

DEFAULT_FUEL = 10_000_000


class FuelExhausted(Exception):
    def __init__(self, steps: int):
        self.steps = steps
        super().__init__(f"fuel exhausted after {steps} steps")


@dataclass(frozen=True)
class StepOutcome:
    loss: tuple
    next: Expr
    rule: str


@dataclass(frozen=True)
class Val:
    value: Expr


@dataclass(frozen=True)
class StuckOp:
    K: tuple[Frame, ...]
    op: str
    arg: Expr

    def plugged(self, w: Expr) -> Expr:
        return plug(self.K, w)


Terminal = Val | StuckOp


def zero_cont(eff: Effect, ty: Type, sig: Signature) -> ZeroCont:
    return ZeroCont(eff, ty, sig.loss_dim)


# ---------------------------------------------------------------------------
# Local reductions shared by both engines


def _hole_type(e: Expr, sig: Signature) -> Type:
    ty, _, _ = tc.infer_full(None, e, sig)
    return ty


def reduce_local(tag: str, e: Expr, sig: Signature) -> tuple[tuple | None, Expr]:
    """Contract a redex other than R5.  Returns (loss or None, result)."""
    match tag:
        case "R1":
            prim = prims_for(sig.loss_dim)[e.prim]
            return None, prim.fn(e.arg, sig.loss_dim)
        case "R2":
            tup = e.expr
            if not isinstance(tup, Tuple):
                raise IllFormed("projection from a non-tuple")
            return None, tup.items[e.index]
        case "R3":
            f = e.fn
            if not isinstance(f, Lam):
                raise IllFormed("application of a non-function")
            return None, subst(f.body, e.arg, f.var)
        case "R4":
            return e.arg.value, UNIT_V
        case "R6":
            h, v1, v2 = e.handler, e.param, e.body
            return None, App(h.return_clause, Tuple((v1, v2)))
        case "R7":
            lam = e.lam
            body = subst(lam.body, e.expr, lam.var)
            return None, GLocal(lam.eff, body, ZeroCont(lam.eff, LOSS, sig.loss_dim))
        case "R8":
            return None, e.body
        case "R9":
            return None, e.body
        case "Rcase":
            s = e.scrutinee
            if isinstance(s, Inl):
                return None, subst(e.e1, s.expr, e.x1)
            if isinstance(s, Inr):
                return None, subst(e.e2, s.expr, e.x2)
            raise IllFormed("cases on a non-injection")
        case "Riter":
            n = e.n
            if isinstance(n, Zero):
                return None, e.base
            if isinstance(n, Succ):
                return None, App(e.step, Iter(n.expr, e.base, e.step))
            raise IllFormed("iter on a non-numeral")
        case "Rfold":
            lst = e.lst
            if isinstance(lst, Nil):
                return None, e.base
            if isinstance(lst, Cons):
                return None, App(e.step, Tuple((lst.head, Fold(lst.tail, e.base, e.step))))
            raise IllFormed("fold over a non-list")
    raise IllFormed(f"unknown redex {tag}")


def handle_op(h: Handler, v1: Expr, K: tuple[Frame, ...], op: str, v2: Expr, gamma: LossCont, sig: Signature) -> tuple[Expr, Lam, Lam]:
    """Rule R5: ⟨h⟩(v1, K[op v2]) →0 v_op(v1, v2, f_l, f_k)."""
    eps = h.result_eff
    in_ty = sig.op(op).in_ty
    z = "z"
    zv = Var(z)
    resumed = Handle(h, Proj(zv, 0), plug(K, Proj(zv, 1)))
    binder = Product((h.param_ty, in_ty))
    f_k = Lam(eps, z, binder, GLocal(eps, resumed, gamma))
    f_l = Lam(eps, z, binder, Then(eps, resumed, gamma.to_lam()))
    clause = h.clause(op)
    return App(clause, Tuple((v1, v2, f_l, f_k))), f_l, f_k


def handler_body_type(h: Handler) -> Type:
    return h.return_clause.var_ty.items[1]


def extend_regular(F: Frame, hole: Expr, eps: Effect, gamma: LossCont, sig: Signature) -> LossCont:
    """The loss continuation λ^ε x:τ. (F[x] ▷_ε γ) used by rule F."""
    return ExtendCont(eps, "x", _hole_type(hole, sig), F.plug(Var("x")), gamma)


def extend_handle(h: Handler, v: Expr, gamma: LossCont) -> LossCont:
    """The loss continuation λ^ε x:σ. (v_r(v, x) ▷_ε γ) used by rule S1."""
    return ExtendCont(h.result_eff, "x", handler_body_type(h), App(h.return_clause, Tuple((v, Var("x")))), gamma)


# ---------------------------------------------------------------------------
# Reference small-step relation


def step(gamma: LossCont, eps: Effect, e: Expr, sig: Signature) -> StepOutcome | None:
    """One transition, or None when e is terminal."""
    frames, leaf = decompose(e)
    if leaf[0] == "value":
        return None
    if leaf[0] == "op":
        j = catcher_index(tuple(frames), leaf[1], eps)
        if j is None:
            return None
    r, e2, rule = _step(gamma, eps, e, sig)
    return StepOutcome(r if r is not None else L.zero(sig.loss_dim), e2, rule)


def _step(gamma: LossCont, eps: Effect, e: Expr, sig: Signature) -> tuple[tuple | None, Expr, str]:
    s = split(e)
    match s[0]:
        case "redex":
            r, e2 = reduce_local(s[1], e, sig)
            return r, e2, s[1]
        case "op":
            raise IllFormed(f"unhandled operation {s[1]} at the top of a redex position")
    F, sub = s[1], s[2]
    # A handle frame whose body is K[op v] with op caught here is an R5 redex.
    if isinstance(F, SHandle):
        frames, leaf = decompose(sub)
        if leaf[0] == "op":
            K = (F,) + tuple(frames)
            j = catcher_index(K, leaf[1], eps)
            if j == 0:
                e2, _, _ = handle_op(F.handler, F.param, tuple(frames), leaf[1], leaf[2], gamma, sig)
                return None, e2, "R5"
    if not F.special:
        r, sub2, rule = _step(extend_regular(F, sub, eps, gamma, sig), eps, sub, sig)
        return r, F.plug(sub2), "F/" + rule
    match F:
        case SHandle(h, v):
            r, sub2, rule = _step(extend_handle(h, v, gamma), h.body_eff, sub, sig)
            return r, F.plug(sub2), "S1/" + rule
        case SThen(teff, lam):
            g1 = cont_from_lam(lam)
            r, sub2, rule = _step(g1, teff, sub, sig)
            inner = F.plug(sub2)
            if r is not None and not L.is_zero(r):
                inner = PrimApp("add", Tuple((Const(r, LOSS), inner)))
            return None, inner, "S2/" + rule
        case SGLocal(geff, g1):
            r, sub2, rule = _step(g1, geff, sub, sig)
            return r, F.plug(sub2), "S3/" + rule
        case SReset():
            r, sub2, rule = _step(gamma, eps, sub, sig)
            return None, F.plug(sub2), "S4/" + rule
    raise IllFormed(f"unknown frame {F!r}")


def terminal_of(e: Expr, eps: Effect) -> Terminal | None:
    frames, leaf = decompose(e)
    if leaf[0] == "value":
        return Val(e)
    if leaf[0] == "op":
        K = tuple(frames)
        if catcher_index(K, leaf[1], eps) is None:
            return StuckOp(K, leaf[1], leaf[2])
    return None


def trace(gamma: LossCont, eps: Effect, e: Expr, sig: Signature, fuel: int = DEFAULT_FUEL) -> list[tuple[str, tuple, Expr]]:
    out = []
    cur = e
    while True:
        o = step(gamma, eps, cur, sig)
        if o is None:
            return out
        if len(out) >= fuel:
            raise FuelExhausted(len(out))
        out.append((o.rule, o.loss, o.next))
        cur = o.next


def small_step_eval(gamma: LossCont, eps: Effect, e: Expr, sig: Signature, fuel: int = DEFAULT_FUEL) -> tuple[tuple, Terminal, int]:
    """Big-step evaluation by iterating the reference `step`."""
    total = L.zero(sig.loss_dim)
    cur, n = e, 0
    while True:
        o = step(gamma, eps, cur, sig)
        if o is None:
            return total, terminal_of(cur, eps), n
        if n >= fuel:
            raise FuelExhausted(n)
        n += 1
        total = L.add(total, o.loss)
        cur = o.next


# ---------------------------------------------------------------------------
# Frame-stack machine


class _Entry:
    __slots__ = ("frame", "amb", "hole", "hole_ty", "gamma", "dirty", "reparam", "mark")

    def __init__(self, frame: Frame, amb: Effect, hole: Expr | None, hole_ty: Type | None = None):
        self.frame = frame
        self.amb = amb  # ambient effect of the hole
        self.hole = hole  # an expression that filled the hole, for its type
        self.hole_ty = hole_ty
        self.gamma = None  # loss continuation of the hole, filled on demand
        self.dirty = False
        self.reparam = False
        self.mark = False


@dataclass
class EvalStats:
    steps: int = 0
    r5: int = 0
    dirty_r5: int = 0
    reparam_r5: int = 0
    rules: dict[str, int] = field(default_factory=dict)

    @property
    def in_fragment(self) -> bool:
        return self.dirty_r5 == 0 and self.reparam_r5 == 0

    def merge(self, other: EvalStats) -> None:
        self.steps += other.steps
        self.r5 += other.r5
        self.dirty_r5 += other.dirty_r5
        self.reparam_r5 += other.reparam_r5
        for k, v in other.rules.items():
            self.rules[k] = self.rules.get(k, 0) + v


@dataclass
class EvalResult:
    loss: tuple
    terminal: Terminal
    stats: EvalStats


def _uses_param(h: Handler) -> bool:
    lam = h.return_clause
    return _mentions_other_than(lam.body, lam.var, 1)


def _mentions_other_than(e: Expr, z: str, idx: int) -> bool:
    """Does e use variable z other than through the projection z.idx?"""
    if z not in fv(e):
        return False
    if isinstance(e, Proj) and isinstance(e.expr, Var) and e.expr.name == z:
        return e.index != idx
    if isinstance(e, Var):
        return True
    if isinstance(e, Lam) and e.var == z:
        return False
    for child in _children(e):
        if _mentions_other_than(child, z, idx):
            return True
    return False


def _children(e: Expr):
    match e:
        case PrimApp(_, a) | Proj(a, _) | Inl(_, _, a) | Inr(_, _, a) | Succ(a) | OpCall(_, a) | Reset(a):
            return (a,)
        case Lam(_, _, _, b):
            return (b,)
        case App(a, b) | Cons(a, b):
            return (a, b)
        case Tuple(items):
            return items
        case Cases(s, _, _, e1, _, _, e2):
            return (s, e1, e2)
        case Iter(a, b, c) | Fold(a, b, c):
            return (a, b, c)
        case Handle(h, p, b):
            return tuple(lam for _, lam in h.op_clauses) + (h.return_clause, p, b)
        case Then(_, a, lam):
            return (a, lam)
        case GLocal(_, b, c):
            return (b, c.to_lam())
        case Loss(a):
            return (a,)
        case _:
            return ()


class Machine:
    """Evaluates γ ⊢_ε e by the same steps as `step`, keeping the
    decomposition as an explicit stack of frames."""

    def __init__(self, gamma: LossCont, eps: Effect, sig: Signature, fuel: int = DEFAULT_FUEL,
                 observe: Callable[[str, dict], None] | None = None):
        self.gamma0 = gamma
        self.eps = eps
        self.sig = sig
        self.fuel = fuel
        self.observe = observe
        self.d = sig.loss_dim
        self.stats = EvalStats()
        self.total = L.zero(self.d)
        self.stack: list[_Entry] = []
        self._resumers: dict[int, tuple[Lam, Expr, Handler]] = {}
        self._reparam: dict[int, Expr] = {}

    # -- helpers

    def _amb(self) -> Effect:
        return self.stack[-1].amb if self.stack else self.eps

    def _push(self, frame: Frame, hole: Expr, outer_amb: Effect) -> _Entry:
        amb = frame_ambient(frame)
        ent = _Entry(frame, amb if amb is not None else outer_amb, hole)
        self.stack.append(ent)
        return ent

    def _gamma_at(self, j: int) -> LossCont:
        """Loss continuation of the hole of stack entry j (j = -1: the top)."""
        if j < 0:
            return self.gamma0
        ent = self.stack[j]
        if ent.gamma is not None:
            return ent.gamma
        # compute iteratively from the nearest cached entry
        k = j
        while k >= 0 and self.stack[k].gamma is None:
            k -= 1
        g = self.gamma0 if k < 0 else self.stack[k].gamma
        for i in range(k + 1, j + 1):
            e = self.stack[i]
            outer_amb = self.stack[i - 1].amb if i > 0 else self.eps
            f = e.frame
            if not f.special:
                ty = e.hole_ty if e.hole_ty is not None else _hole_type(e.hole, self.sig)
                g = ExtendCont(outer_amb, "x", ty, f.plug(Var("x")), g)
            elif isinstance(f, SHandle):
                g = extend_handle(f.handler, f.param, g)
            elif isinstance(f, SThen):
                g = cont_from_lam(f.lam)
            elif isinstance(f, SGLocal):
                g = f.cont
            e.gamma = g
        return g

    def _catcher(self, op: str) -> int | None:
        # same search as catcher_index, on the stack directly
        st = self.stack
        amb = st[-1].amb if st else self.eps
        for j in range(len(st) - 1, -1, -1):
            f = st[j].frame
            if type(f) is SHandle and f.handler.handles(op):
                label = f.handler.label
                if f.handler.result_eff.count(label) + 1 == amb.count(label):
                    return j
        return None

    def _emit(self, r: tuple) -> None:
        if L.is_zero(r):
            return
        st = self.stack
        for i in range(len(st) - 1, -1, -1):
            f = st[i].frame
            if isinstance(f, SReset):
                return
            if isinstance(f, SThen):
                outer_amb = st[i - 1].amb if i > 0 else self.eps
                e_add = _Entry(FPrim("add"), outer_amb, None, Product((LOSS, LOSS)))
                e_tup = _Entry(FTuple((Const(r, LOSS),), ()), outer_amb, None, LOSS)
                st[i:i] = [e_add, e_tup]
                # entries inside the then keep their cached continuations
                return
            if isinstance(f, SHandle):
                st[i].dirty = True
        self.total = L.add(self.total, r)

    def _tick(self, rule: str) -> None:
        s = self.stats
        if s.steps >= self.fuel:
            raise FuelExhausted(s.steps)
        s.steps += 1
        s.rules[rule] = s.rules.get(rule, 0) + 1

    # -- main loop

    def run(self, e: Expr) -> EvalResult:
        sig = self.sig
        cur = e
        st = self.stack
        stats = self.stats
        rules = stats.rules
        fuel = self.fuel
        reparam = self._reparam
        resumers = self._resumers
        splitters = _SPLIT
        while True:
            s = splitters[type(cur)](cur)
            kind = s[0]
            if kind == "frame":
                F, sub = s[1], s[2]
                tf = type(F)
                if tf is SHandle:
                    amb = F.handler.body_eff
                elif tf is SGLocal:
                    amb = F.eff
                else:
                    amb = st[-1].amb if st else self.eps
                ent = _Entry(F, amb, sub)
                st.append(ent)
                if reparam and id(cur) in reparam:
                    if tf is SHandle:
                        ent.reparam = True
                    elif tf is FHandleParam:
                        ent.mark = True
                cur = sub
                continue
            if kind == "value":
                if not st:
                    return EvalResult(self.total, Val(cur), stats)
                ent = st.pop()
                nxt = ent.frame.plug(cur)
                if ent.mark:
                    reparam[id(nxt)] = nxt
                cur = nxt
                continue
            if kind == "op":
                op, v2 = s[1], s[2]
                j = self._catcher(op)
                if j is None:
                    K = tuple(ent.frame for ent in st)
                    return EvalResult(self.total, StuckOp(K, op, v2), stats)
                if stats.steps >= fuel:
                    raise FuelExhausted(stats.steps)
                stats.steps += 1
                rules["R5"] = rules.get("R5", 0) + 1
                cur = self._r5(j, op, v2)
                continue
            tag = s[1]
            if stats.steps >= fuel:
                raise FuelExhausted(stats.steps)
            stats.steps += 1
            rules[tag] = rules.get(tag, 0) + 1
            if tag == "R3" and resumers and id(cur.fn) in resumers:
                cur = self._resume(cur)
                continue
            r, cur = reduce_local(tag, cur, sig)
            if r is not None:
                self._emit(r)

    def _r5(self, j: int, op: str, v2: Expr) -> Expr:
        st = self.stack
        ent = st[j]
        h, v1 = ent.frame.handler, ent.frame.param
        self.stats.r5 += 1
        if ent.dirty:
            self.stats.dirty_r5 += 1
        if self._reparam and any(st[i].reparam and _uses_param(st[i].frame.handler) for i in range(j)):
            self.stats.reparam_r5 += 1
        gamma = self._gamma_at(j - 1)
        K = tuple(x.frame for x in st[j + 1:])
        new, f_l, f_k = handle_op(h, v1, K, op, v2, gamma, self.sig)
        if self.observe is not None:
            self.observe("R5", {"handler": h, "op": op, "param": v1, "arg": v2, "dirty": ent.dirty})
        if _uses_param(h):
            # only these resumptions can break the fragment
            self._resumers[id(f_l)] = (f_l, v1, h)
            self._resumers[id(f_k)] = (f_k, v1, h)
        del st[j:]
        return new

    def _resume(self, app: App) -> Expr:
        lam, v1, h = self._resumers[id(app.fn)]
        out = subst(lam.body, app.arg, lam.var)
        arg = app.arg
        p_new = arg.items[0] if isinstance(arg, Tuple) else None
        if p_new is not None and p_new != v1:
            inner = out.body if isinstance(out, GLocal) else out.expr
            self._reparam[id(inner)] = inner
        return out


def big_eval_report(gamma: LossCont, eps: Effect, e: Expr, sig: Signature, fuel: int = DEFAULT_FUEL,
                    observe: Callable[[str, dict], None] | None = None) -> EvalResult:
    return Machine(gamma, eps, sig, fuel, observe).run(e)


def big_eval(gamma: LossCont, eps: Effect, e: Expr, sig: Signature, fuel: int = DEFAULT_FUEL) -> tuple[tuple, Terminal]:
    res = big_eval_report(gamma, eps, e, sig, fuel)
    return res.loss, res.terminal


def run_program(e: Expr, ty: Type, eps: Effect, sig: Signature, fuel: int = DEFAULT_FUEL,
                observe: Callable[[str, dict], None] | None = None) -> EvalResult:
    """Run a closed program under the zero loss continuation."""
    return big_eval_report(zero_cont(eps, ty, sig), eps, e, sig, fuel, observe)


# ---------------------------------------------------------------------------
# Giant-step evaluation


@dataclass(frozen=True)
class Done:
    loss: tuple
    value: Expr


@dataclass(frozen=True)
class OpNode:
    label: str
    op: str
    index: int
    arg: Expr
    resume: Callable[[Expr], GiantValue]
    loss: tuple = ()


GiantValue = Done | OpNode


def _shift(r: tuple, g: GiantValue) -> GiantValue:
    if isinstance(g, Done):
        return Done(L.add(r, g.loss), g.value)
    res = g.resume
    return OpNode(g.label, g.op, g.index, g.arg, lambda w: _shift(r, res(w)), L.add(r, g.loss) if g.loss else r)


def giant_eval(gamma: LossCont, eps: Effect, e: Expr, sig: Signature, fuel: int = DEFAULT_FUEL,
               stats: EvalStats | None = None) -> GiantValue:
    """Evaluate to an effect value; children are evaluated when resumed."""
    res = big_eval_report(gamma, eps, e, sig, fuel)
    if stats is not None:
        stats.merge(res.stats)
    r, w = res.loss, res.terminal
    if isinstance(w, Val):
        return Done(r, w.value)
    label = sig.label_of(w.op)
    amb = hole_ambient(w.K) or eps
    K = w.K

    def resume(v: Expr) -> GiantValue:
        return _shift(r, giant_eval(gamma, eps, plug(K, v), sig, fuel, stats))

    return OpNode(label, w.op, amb.count(label), w.arg, resume, r)
