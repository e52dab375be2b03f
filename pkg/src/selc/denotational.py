"""Selection-monad semantics.

Effect trees F_ε(X) have leaves of X and nodes tagged (label, op, depth index,
out value) whose children are Python functions of the in value, so they are
only ever expanded on demand.  W_ε(X) is F_ε(R × X), R_ε is F_ε(R), and a
computation in S_ε(X) maps a loss function X → R_ε to a W-tree.

`Denotation` holds the signature and loss dimension and gives meaning to
expressions, values, loss functions and handlers.  It refuses signatures
that are not well-founded.
"""

from __future__ import annotations

import sys
import threading
from dataclasses import dataclass
from typing import Callable

from . import loss as L
from . import typecheck as tc
from .prims import prims_for
from .syntax import (
    LOSS,
    App,
    Base,
    Cases,
    Cons,
    Const,
    Effect,
    Expr,
    Fold,
    GLocal,
    Handle,
    Handler,
    Inl,
    Inr,
    Iter,
    Lam,
    Loss,
    LossCont,
    Nil,
    OpCall,
    PrimApp,
    Proj,
    Reset,
    Signature,
    Succ,
    Then,
    Tuple,
    Var,
    Zero,
    nat,
)

# ---------------------------------------------------------------------------
# Semantic values


class SemValue:
    __slots__ = ()


@dataclass(frozen=True, slots=True)
class ConstV(SemValue):
    value: object
    ty: Base


@dataclass(frozen=True, slots=True)
class TupleV(SemValue):
    items: tuple


@dataclass(frozen=True, slots=True)
class TagV(SemValue):
    side: int
    value: SemValue


@dataclass(frozen=True, slots=True)
class NatV(SemValue):
    n: int


@dataclass(frozen=True, slots=True)
class ListV(SemValue):
    items: tuple


@dataclass(frozen=True, slots=True, eq=False)
class FnV(SemValue):
    fn: Callable[[SemValue], "SelComp"]

    def __call__(self, a: SemValue) -> SelComp:
        return self.fn(a)


UNIT_SV = TupleV(())
TRUE_SV = TagV(0, UNIT_SV)
FALSE_SV = TagV(1, UNIT_SV)


def is_first_order_sem(v: SemValue) -> bool:
    match v:
        case FnV():
            return False
        case TupleV(items) | ListV(items):
            return all(is_first_order_sem(x) for x in items)
        case TagV(_, a):
            return is_first_order_sem(a)
    return True


def render_sem(v: SemValue) -> str:
    match v:
        case ConstV(value, ty):
            from .pretty import print_literal

            return print_literal(value, ty)
        case TupleV((a,)):
            return "(" + render_sem(a) + ",)"
        case TupleV(items):
            return "(" + ", ".join(render_sem(a) for a in items) + ")"
        case TagV(0, TupleV(())):
            return "true"
        case TagV(1, TupleV(())):
            return "false"
        case TagV(side, a):
            return ("inl(" if side == 0 else "inr(") + render_sem(a) + ")"
        case NatV(n):
            return str(n)
        case ListV(items):
            return "[" + ", ".join(render_sem(a) for a in items) + "]"
        case FnV():
            return "<fn>"
    raise TypeError(f"not a semantic value: {v!r}")


# ---------------------------------------------------------------------------
# Effect trees


class Tree:
    __slots__ = ()


@dataclass(frozen=True, slots=True)
class Leaf(Tree):
    value: object  # a loss vector (R-trees) or a pair (loss vector, SemValue) (W-trees)


@dataclass(frozen=True, slots=True, eq=False)
class Node(Tree):
    label: str
    op: str
    index: int
    out: SemValue
    children: Callable[[SemValue], Tree]

    def child(self, a: SemValue) -> Tree:
        return self.children(a)


@dataclass(frozen=True, slots=True)
class SelComp:
    run: Callable[[Callable[[SemValue], Tree]], Tree]


Gamma = Callable[[SemValue], Tree]


def tree_map(f: Callable, t: Tree) -> Tree:
    """Functor action of F_ε."""
    if isinstance(t, Leaf):
        return Leaf(f(t.value))
    k = t.children
    return Node(t.label, t.op, t.index, t.out, lambda a: tree_map(f, k(a)))


def tree_extend(f: Callable, t: Tree, psi: Callable | None = None):
    """Homomorphic extension of f along t into the algebra given by psi.

    psi(label, op, index, out, k) interprets a node whose children have
    already been mapped to k; the default rebuilds the node."""
    if isinstance(t, Leaf):
        return f(t.value)
    k = t.children
    kk = lambda a: tree_extend(f, k(a), psi)
    if psi is None:
        return Node(t.label, t.op, t.index, t.out, kk)
    return psi(t.label, t.op, t.index, t.out, kk)


def _is_r_leaf(x) -> bool:
    return not x or not isinstance(x[0], tuple)


def w_action(r: tuple, u: Tree) -> Tree:
    """r·u: add r to the loss at every leaf (of a W-tree or an R-tree)."""
    if L.is_zero(r):
        return u
    if isinstance(u, Leaf):
        x = u.value
        if _is_r_leaf(x):
            return Leaf(L.add(r, x))
        return Leaf((L.add(r, x[0]), x[1]))
    k = u.children
    return Node(u.label, u.op, u.index, u.out, lambda a: w_action(r, k(a)))


def w_loss(t: Tree, gamma: Gamma) -> Tree:
    """γ†W: the R-tree obtained by extending γ over a W-tree."""
    return tree_extend(lambda rx: w_action(rx[0], gamma(rx[1])), t)


def sel_unit(x: SemValue, dim: int = 1) -> SelComp:
    leaf = Leaf((L.zero(dim), x))
    return SelComp(lambda gamma: leaf)


def er(F: SelComp, gamma: Gamma) -> Tree:
    """The loss of a selection: ER(F, γ) = γ†W(F(γ))."""
    return w_loss(F.run(gamma), gamma)


def sel_bind(F: SelComp, f: Callable[[SemValue], SelComp]) -> SelComp:
    def run(gamma: Gamma) -> Tree:
        t = F.run(lambda x: er(f(x), gamma))
        return tree_extend(lambda rx: w_action(rx[0], f(rx[1]).run(gamma)), t)

    return SelComp(run)


def zero_gamma(dim: int) -> Gamma:
    leaf = Leaf(L.zero(dim))
    return lambda a: leaf


# ---------------------------------------------------------------------------
# Conversions for primitives and probes


def reify(v: SemValue) -> Expr:
    """The kernel value denoting a first-order semantic value."""
    match v:
        case ConstV(value, ty):
            return Const(value, ty)
        case TupleV(items):
            return Tuple(tuple(reify(a) for a in items))
        case NatV(n):
            return nat(n)
    raise TypeError(f"cannot reify {v!r} without a type")


class NotWellFoundedError(Exception):
    pass


class Denotation:
    """Meaning of expressions over one signature."""

    def __init__(self, sig: Signature, allow_nonwf: bool = False):
        wf = tc.check_wellfounded(sig)
        if isinstance(wf, tc.CycleWitness) and not allow_nonwf:
            raise NotWellFoundedError(f"denotational semantics needs a well-founded signature; cycle {wf}")
        self.sig = sig
        self.dim = sig.loss_dim
        self.zero = L.zero(self.dim)
        self.gamma0 = zero_gamma(self.dim)
        self.prims = prims_for(self.dim)

    # -- helpers

    def unit(self, x: SemValue) -> SelComp:
        return sel_unit(x, self.dim)

    def _seq(self, rho: dict, es, eps: Effect, k: Callable[[list], SelComp]) -> SelComp:
        es = tuple(es)

        def go(i: int, acc: list) -> SelComp:
            if i == len(es):
                return k(acc)
            return sel_bind(self.expr(rho, es[i], eps), lambda a: go(i + 1, acc + [a]))

        return go(0, [])

    # -- values

    def value(self, rho: dict, v: Expr) -> SemValue:
        match v:
            case Var(x):
                return rho[x]
            case Const(value, ty):
                return ConstV(value, ty)
            case Tuple(items):
                return TupleV(tuple(self.value(rho, a) for a in items))
            case Lam(eff, x, _, body):
                return FnV(lambda a: self.expr({**rho, x: a}, body, eff))
            case Inl(_, _, a):
                return TagV(0, self.value(rho, a))
            case Inr(_, _, a):
                return TagV(1, self.value(rho, a))
            case Zero():
                return NatV(0)
            case Succ(a):
                n = self.value(rho, a)
                return NatV(n.n + 1)
            case Nil():
                return ListV(())
            case Cons(h, t):
                return ListV((self.value(rho, h),) + self.value(rho, t).items)
        raise TypeError(f"not a value: {v}")

    def loss_fn(self, rho: dict, lam: Lam) -> Gamma:
        """L⟦λx.e⟧: run e under the zero loss function and keep the returned loss."""
        if isinstance(lam, LossCont):
            lam = lam.to_lam()
        x, body, eff = lam.var, lam.body, lam.eff
        g0 = self.gamma0
        return lambda a: tree_map(lambda rx: rx[1].value, self.expr({**rho, x: a}, body, eff).run(g0))

    # -- expressions

    def expr(self, rho: dict, e: Expr, eps: Effect) -> SelComp:
        match e:
            case Var(x):
                return self.unit(rho[x])
            case Const(value, ty):
                return self.unit(ConstV(value, ty))
            case PrimApp(p, a):
                prim = self.prims[p]
                d = self.dim
                return sel_bind(self.expr(rho, a, eps), lambda v: self.unit(_reflect(prim.fn(reify(v), d))))
            case Tuple(items):
                return self._seq(rho, items, eps, lambda vs: self.unit(TupleV(tuple(vs))))
            case Proj(a, i):
                return _fmap(lambda v: v.items[i], self.expr(rho, a, eps))
            case Lam(eff, x, _, body):
                return self.unit(FnV(lambda a: self.expr({**rho, x: a}, body, eff)))
            case App(f, a):
                return self._seq(rho, (f, a), eps, lambda vs: vs[0].fn(vs[1]))
            case Inl(_, _, a):
                return _fmap(lambda v: TagV(0, v), self.expr(rho, a, eps))
            case Inr(_, _, a):
                return _fmap(lambda v: TagV(1, v), self.expr(rho, a, eps))
            case Cases(s, x1, _, e1, x2, _, e2):
                def branch(v: TagV) -> SelComp:
                    if v.side == 0:
                        return self.expr({**rho, x1: v.value}, e1, eps)
                    return self.expr({**rho, x2: v.value}, e2, eps)

                return sel_bind(self.expr(rho, s, eps), branch)
            case Zero():
                return self.unit(NatV(0))
            case Succ(a):
                return _fmap(lambda v: NatV(v.n + 1), self.expr(rho, a, eps))
            case Iter(n, b, s):
                def iterate(vs: list) -> SelComp:
                    c = self.unit(vs[1])
                    for _ in range(vs[0].n):
                        c = sel_bind(c, vs[2].fn)
                    return c

                return self._seq(rho, (n, b, s), eps, iterate)
            case Nil():
                return self.unit(ListV(()))
            case Cons(h, t):
                return self._seq(rho, (h, t), eps, lambda vs: self.unit(ListV((vs[0],) + vs[1].items)))
            case Fold(lst, b, s):
                def fold(vs: list) -> SelComp:
                    c = self.unit(vs[1])
                    phi = vs[2].fn
                    for h in reversed(vs[0].items):
                        c = sel_bind(c, lambda acc, h=h: phi(TupleV((h, acc))))
                    return c

                return self._seq(rho, (lst, b, s), eps, fold)
            case OpCall(op, a):
                label = self.sig.label_of(op)
                idx = eps.count(label)
                z = self.zero

                def node(o: SemValue) -> SelComp:
                    t = Node(label, op, idx, o, lambda b: Leaf((z, b)))
                    return SelComp(lambda gamma: t)

                return sel_bind(self.expr(rho, a, eps), node)
            case Loss(a):
                unit = UNIT_SV
                return sel_bind(self.expr(rho, a, eps), lambda r: SelComp(lambda gamma: Leaf((r.value, unit))))
            case Handle(h, p, body):
                hsem = self.handler(rho, h)
                inner = self.expr(rho, body, h.body_eff)
                return sel_bind(self.expr(rho, p, eps), lambda a: hsem(a, inner))
            case Then(teff, a, lam):
                return self._then(rho, teff, a, lam)
            case GLocal(geff, body, cont):
                inner = self.expr(rho, body, geff)
                lf = self.loss_fn(rho, cont.to_lam())
                return SelComp(lambda gamma: inner.run(lf))
            case Reset(body):
                inner = self.expr(rho, body, eps)
                z = self.zero
                return SelComp(lambda gamma: tree_map(lambda rx: (z, rx[1]), inner.run(gamma)))
        raise TypeError(f"not an expression: {e!r}")

    def _then(self, rho: dict, teff: Effect, a: Expr, lam: Lam) -> SelComp:
        first = self.expr(rho, a, teff)
        lf = self.loss_fn(rho, lam)
        g0 = self.gamma0

        def run(gamma: Gamma) -> Tree:
            def cont(rx):
                r1, v = rx
                t2 = self.expr({**rho, lam.var: v}, lam.body, lam.eff).run(g0)
                return tree_map(lambda r23: (r23[0], ConstV(L.add(r1, r23[1].value), LOSS)), t2)

            return tree_extend(cont, first.run(lf))

        return SelComp(run)

    # -- handlers

    def handler(self, rho: dict, h: Handler) -> Callable[[SemValue, SelComp], SelComp]:
        ret = self.value(rho, h.return_clause)
        clauses = {op: self.value(rho, lam) for op, lam in h.op_clauses}
        own = h.result_eff.count(h.label) + 1
        label = h.label
        z = self.zero

        def apply(p: SemValue, G: SelComp) -> SelComp:
            def run(gamma: Gamma) -> Tree:
                def seed(rx):
                    r, a = rx
                    return lambda p1: w_action(r, ret.fn(TupleV((p1, a))).run(gamma))

                def psi(l1, op, i, o, kk):
                    if l1 == label and i == own:
                        clause = clauses[op]

                        def k1(pa: TupleV) -> SelComp:
                            p2, a = pa.items
                            return SelComp(lambda g1: kk(a)(p2))

                        def l1f(pa: TupleV) -> SelComp:
                            p2, a = pa.items
                            return SelComp(lambda g1: tree_map(lambda r: (z, ConstV(r, LOSS)), w_loss(kk(a)(p2), gamma)))

                        return lambda p1: clause.fn(TupleV((p1, o, FnV(l1f), FnV(k1)))).run(gamma)
                    return lambda p1: Node(l1, op, i, o, lambda a: kk(a)(p1))

                body_gamma = lambda a: er(ret.fn(TupleV((p, a))), gamma)
                return tree_extend(seed, G.run(body_gamma), psi)(p)

            return SelComp(run)

        return apply

    # -- programs

    def program(self, e: Expr, eps: Effect) -> SelComp:
        return self.expr({}, e, eps)

    def run_program(self, e: Expr, eps: Effect) -> Tree:
        """⟦e⟧ under the zero loss function."""
        return self.expr({}, e, eps).run(self.gamma0)


def _fmap(f: Callable, c: SelComp) -> SelComp:
    """Functor action of S_ε, which only touches leaf values."""

    def run(gamma: Gamma) -> Tree:
        t = c.run(lambda x: gamma(f(x)))
        return tree_map(lambda rx: (rx[0], f(rx[1])), t)

    return SelComp(run)


def _reflect(v: Expr) -> SemValue:
    match v:
        case Const(value, ty):
            return ConstV(value, ty)
        case Tuple(items):
            return TupleV(tuple(_reflect(a) for a in items))
        case Inl(_, _, a):
            return TagV(0, _reflect(a))
        case Inr(_, _, a):
            return TagV(1, _reflect(a))
        case Zero() | Succ():
            n = 0
            while isinstance(v, Succ):
                n += 1
                v = v.expr
            return NatV(n)
    raise TypeError(f"primitive returned a non-value {v!r}")


# ---------------------------------------------------------------------------
# Module-level conveniences


def denote_value(rho: dict, v: Expr, sig: Signature) -> SemValue:
    return Denotation(sig).value(rho, v)


def denote_expr(rho: dict, e: Expr, eps: Effect, sig: Signature) -> SelComp:
    return Denotation(sig).expr(rho, e, eps)


def denote_loss_fn(rho: dict, lam: Lam, sig: Signature) -> Gamma:
    return Denotation(sig).loss_fn(rho, lam)


def denote_handler(rho: dict, h: Handler, sig: Signature) -> Callable[[SemValue, SelComp], SelComp]:
    return Denotation(sig).handler(rho, h)


_DEEP_STACK = 512 * 1024 * 1024


def deep(fn: Callable, *args, **kwargs):
    """Run fn on a thread with a large stack: trees of long programs nest deeply."""
    box: dict = {}

    def target():
        try:
            box["value"] = fn(*args, **kwargs)
        except BaseException as exc:  # re-raised on the calling thread
            box["error"] = exc

    old_limit = sys.getrecursionlimit()
    old_size = threading.stack_size()
    sys.setrecursionlimit(max(old_limit, 1_000_000))
    threading.stack_size(_DEEP_STACK)
    try:
        t = threading.Thread(target=target)
        t.start()
        t.join()
    finally:
        threading.stack_size(old_size)
    if "error" in box:
        raise box["error"]
    return box["value"]


# ---------------------------------------------------------------------------
# Rendering


def render_tree(t: Tree, probe: Callable[[str], list[SemValue]], depth: int = 3, indent: int = 0) -> str:
    """Text rendering; node children are expanded at probe(op) values, `depth` levels deep."""
    pad = "  " * indent
    if isinstance(t, Leaf):
        return pad + _render_leaf(t.value)
    head = f"{pad}{t.label}.{t.op}#{t.index}({render_sem(t.out)})"
    if depth <= 0:
        return head + " ..."
    lines = [head]
    for a in probe(t.op):
        lines.append(f"{pad}  {render_sem(a)} =>")
        lines.append(render_tree(t.child(a), probe, depth - 1, indent + 2))
    return "\n".join(lines)


def _render_leaf(x) -> str:
    if _is_r_leaf(x):
        return L.fmt(x)
    return f"({L.fmt(x[0])}, {render_sem(x[1])})"


def tree_json(t: Tree, probe: Callable[[str], list[SemValue]], depth: int = 3) -> dict:
    if isinstance(t, Leaf):
        x = t.value
        if _is_r_leaf(x):
            return {"leaf": {"loss": list(x)}}
        return {"leaf": {"loss": list(x[0]), "value": render_sem(x[1])}}
    out = {"label": t.label, "op": t.op, "index": t.index, "out": render_sem(t.out)}
    if depth > 0:
        out["children"] = [{"in": render_sem(a), "tree": tree_json(t.child(a), probe, depth - 1)} for a in probe(t.op)]
    return out
