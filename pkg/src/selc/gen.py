"""Random well-typed closed terms over a small well-founded signature.

Generation is type directed: `TermGen.expr(env, ty, eps, size)` returns an
expression of type `ty` that checks at exactly the ambient effect `eps`.
Every construct that pins its effect (application, handlers, `then`,
iteration) is built at `eps`; `local` may narrow the ambient.  Iteration
counts are numeral literals so that every term terminates quickly.
"""

from __future__ import annotations

import random

from . import typecheck as tc
from .syntax import (
    BOOL,
    FALSE,
    LOSS,
    NAT,
    TRUE,
    UNIT,
    UNIT_V,
    App,
    Cases,
    Cons,
    Const,
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
    Nat,
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
    nat,
)

NDET = Effect.of("ndet")

DEFAULT_SIG = Signature.build([
    OpSig("decide", UNIT, BOOL, "ndet"),
    OpSig("choose", LOSS, LOSS, "num"),
    OpSig("consult", Fn(UNIT, BOOL, NDET), LOSS, "ask"),
])

GROUND = (UNIT, BOOL, LOSS, NAT, Product((LOSS, BOOL)), ListT(LOSS), Sum(LOSS, UNIT))
_GROUND_W = (3, 3, 5, 1, 1, 1, 1)
_LOSS_LITS = (0.0, 1.0, 2.0, -1.0, 0.5, 3.0)
_PARAM_TYS = (UNIT, LOSS, BOOL, NAT)


def term_size(e) -> int:
    """Number of expression nodes, counting handler clauses and loss continuations."""
    match e:
        case Const() | Var() | Zero() | Nil() | Proj(Var(), _):
            # a projection of a variable is one of the names a surface pattern binds
            return 1
        case PrimApp(_, a) | Proj(a, _) | Inl(_, _, a) | Inr(_, _, a) | Succ(a) | OpCall(_, a) | Loss(a) | Reset(a):
            return 1 + term_size(a)
        case Lam(_, _, _, b):
            return 1 + term_size(b)
        case App(a, b) | Cons(a, b):
            return 1 + term_size(a) + term_size(b)
        case Tuple(items):
            return 1 + sum(term_size(a) for a in items)
        case Cases(s, _, _, e1, _, _, e2):
            return 1 + term_size(s) + term_size(e1) + term_size(e2)
        case Iter(a, b, c) | Fold(a, b, c):
            return 1 + term_size(a) + term_size(b) + term_size(c)
        case Handle(h, p, b):
            hs = sum(term_size(lam) for _, lam in h.op_clauses) + term_size(h.return_clause)
            return 1 + hs + term_size(p) + term_size(b)
        case Then(_, a, lam):
            return 1 + term_size(a) + term_size(lam)
        case GLocal(_, b, c):
            return 1 + term_size(b) + (1 if isinstance(c, ZeroCont) else term_size(c.to_lam()))
    raise TypeError(f"not an expression: {e!r}")


class TermGen:
    def __init__(self, rng: random.Random, sig: Signature = DEFAULT_SIG):
        self.rng = rng
        self.sig = sig
        self.dim = sig.loss_dim
        self.n = 0
        self.hot: frozenset[str] = frozenset()  # labels of enclosing handlers, whose ops are favoured

    def fresh(self, base: str) -> str:
        self.n += 1
        return f"{base}{self.n}"

    # -- choices

    def ground(self) -> Type:
        return self.rng.choices(GROUND, _GROUND_W)[0]

    def bind_type(self, eps: Effect) -> Type:
        if self.rng.random() < 0.12:
            return Fn(self.rng.choice((LOSS, BOOL)), self.rng.choice((LOSS, BOOL, UNIT)), eps)
        return self.ground()

    def sub_effect(self, eps: Effect) -> Effect:
        return Effect([x for x in eps if self.rng.random() < 0.7])

    def split(self, size: int, parts: int) -> list[int]:
        """Share size - 1 among `parts` children, each at least 1."""
        budget = max(size - 1, parts)
        cuts = sorted(self.rng.randint(0, budget - parts) for _ in range(parts - 1))
        out, prev = [], 0
        for c in cuts + [budget - parts]:
            out.append(c - prev + 1)
            prev = c
        return out

    # -- leaves

    def literal(self, env, ty: Type) -> Expr:
        rng = self.rng
        match ty:
            case Product(()):
                return UNIT_V
            case Sum(Product(()), Product(())):
                return rng.choice((TRUE, FALSE))
            case _ if ty == LOSS:
                return Const((rng.choice(_LOSS_LITS),) * self.dim, LOSS)
            case Nat():
                return nat(rng.randint(0, 3))
            case Product(items):
                return Tuple(tuple(self.literal(env, t) for t in items))
            case ListT(t):
                out: Expr = Nil(t)
                for _ in range(rng.randint(0, 2)):
                    out = Cons(self.literal(env, t), out)
                return out
            case Sum(a, b):
                if rng.random() < 0.5:
                    return Inl(a, b, self.literal(env, a))
                return Inr(a, b, self.literal(env, b))
            case Fn(a, b, eff):
                x = self.fresh("x")
                return Lam(eff, x, a, self.leaf(env + ((Var(x), a),), b, eff))
        raise TypeError(f"no literal for {ty}")

    def leaf(self, env, ty: Type, eps: Effect) -> Expr:
        atoms = [a for a, t in env if t == ty]
        if atoms and self.rng.random() < 0.6:
            return self.rng.choice(atoms)
        return self.literal(env, ty)

    # -- compound terms

    def expr(self, env, ty: Type, eps: Effect, size: int) -> Expr:
        if size <= 1:
            return self.leaf(env, ty, eps)
        cands = self.productions(env, ty, eps, size)
        weights = [w for w, _ in cands]
        _, make = self.rng.choices(cands, weights)[0]
        return make()

    def productions(self, env, ty: Type, eps: Effect, size: int):
        rng = self.rng
        c = []
        c.append((1.0 if size <= 3 else 0.1, lambda: self.leaf(env, ty, eps)))
        c.append((2.0, lambda: self.let(env, ty, eps, size)))
        c.append((1.0, lambda: self.cases(env, ty, eps, size)))
        calls = [(a, t) for a, t in env if isinstance(t, Fn) and t.res == ty and t.eff == eps]
        if calls:
            c.append((4.0, lambda: self.call(env, calls, eps, size)))
        if size >= 6:
            c.append((3.5, lambda: self.handle(env, ty, eps, size)))
        c.append((0.8, lambda: self.glocal(env, ty, eps, size)))
        c.append((0.5, lambda: Reset(self.expr(env, ty, eps, size - 1))))
        if size >= 3:
            c.append((0.7, lambda: self.iterate(env, ty, eps, size)))
            c.append((0.7, lambda: self.fold(env, ty, eps, size)))
        c.append((0.4, lambda: self.proj(env, ty, eps, size)))
        ops = [s for s in self.sig_ops() if s.in_ty == ty and s.label in eps.labels()]
        for s in ops:
            w = 6.0 if s.label in self.hot else 3.5
            c.append((w, lambda s=s: OpCall(s.name, self.expr(env, s.out_ty, eps, size - 1))))
        match ty:
            case Product(()):
                c.append((3.0, lambda: Loss(self.expr(env, LOSS, eps, size - 1))))
            case _ if ty == LOSS:
                c.append((3.0, lambda: self.binop(env, rng.choice(("add", "sub", "mul")), eps, size)))
                c.append((0.3, lambda: PrimApp("neg", self.expr(env, LOSS, eps, size - 1))))
                c.append((0.3, lambda: PrimApp("nat2loss", self.expr(env, NAT, eps, size - 1))))
                c.append((1.5, lambda: self.then(env, eps, size)))
            case Sum(Product(()), Product(())):
                c.append((2.0, lambda: self.binop(env, rng.choice(("lt", "leq")), eps, size)))
            case Nat():
                c.append((1.0, lambda: Succ(self.expr(env, NAT, eps, size - 1))))
            case Product(items):
                c.append((3.0, lambda: self.tuple(env, items, eps, size)))
            case ListT(t):
                c.append((2.0, lambda: self.cons(env, t, eps, size)))
            case Sum(a, b):
                c.append((1.0, lambda: Inl(a, b, self.expr(env, a, eps, size - 1))))
                c.append((1.0, lambda: Inr(a, b, self.expr(env, b, eps, size - 1))))
            case Fn(a, b, eff):
                c.append((3.0, lambda: self.lam(env, a, b, eff, size)))
        return c

    def sig_ops(self) -> list[OpSig]:
        return [s for ops in self.sig.effects.values() for s in ops]

    def let(self, env, ty, eps, size):
        t = self.bind_type(eps)
        s1, s2 = self.split(size, 2)
        x = self.fresh("x")
        body = self.expr(env + ((Var(x), t),), ty, eps, s1)
        return App(Lam(eps, x, t, body), self.expr(env, t, eps, s2))

    def call(self, env, calls, eps, size):
        f, t = self.rng.choice(calls)
        return App(f, self.expr(env, t.arg, eps, size - 1))

    def cases(self, env, ty, eps, size):
        st = self.rng.choice((BOOL, BOOL, Sum(LOSS, UNIT)))
        s0, s1, s2 = self.split(size, 3)
        x1, x2 = self.fresh("y"), self.fresh("y")
        return Cases(
            self.expr(env, st, eps, s0),
            x1, st.left, self.expr(env + ((Var(x1), st.left),), ty, eps, s1),
            x2, st.right, self.expr(env + ((Var(x2), st.right),), ty, eps, s2),
        )

    def binop(self, env, prim, eps, size):
        s1, s2 = self.split(size, 2)
        return PrimApp(prim, Tuple((self.expr(env, LOSS, eps, s1), self.expr(env, LOSS, eps, s2))))

    def tuple(self, env, items, eps, size):
        sizes = self.split(size, len(items)) if items else []
        return Tuple(tuple(self.expr(env, t, eps, s) for t, s in zip(items, sizes)))

    def cons(self, env, t, eps, size):
        s1, s2 = self.split(size, 2)
        return Cons(self.expr(env, t, eps, s1), self.expr(env, ListT(t), eps, s2))

    def lam(self, env, a, b, eff, size):
        x = self.fresh("x")
        return Lam(eff, x, a, self.expr(env + ((Var(x), a),), b, eff, size - 1))

    def proj(self, env, ty, eps, size):
        other = self.ground()
        i = self.rng.randint(0, 1)
        items = (ty, other) if i == 0 else (other, ty)
        return Proj(self.expr(env, Product(items), eps, size - 1), i)

    def then(self, env, eps, size):
        t = self.ground()
        s1, s2 = self.split(size, 2)
        eff2 = self.sub_effect(eps)
        x = self.fresh("x")
        lam = Lam(eff2, x, t, self.expr(env + ((Var(x), t),), LOSS, eff2, s2))
        return Then(eps, self.expr(env, t, eps, s1), lam)

    def loss_cont(self, env, ty, eff, size):
        if size <= 1 or self.rng.random() < 0.4:
            return ZeroCont(eff, ty, self.dim)
        eff2 = self.sub_effect(eff)
        x = self.fresh("x")
        return cont_from_lam(Lam(eff2, x, ty, self.expr(env + ((Var(x), ty),), LOSS, eff2, size)))

    def glocal(self, env, ty, eps, size):
        eff = self.sub_effect(eps)
        s1, s2 = self.split(size, 2)
        return GLocal(eff, self.expr(env, ty, eff, s1), self.loss_cont(env, ty, eff, s2))

    def iterate(self, env, ty, eps, size):
        s1, s2 = self.split(size - 1, 2)
        x = self.fresh("x")
        step = Lam(eps, x, ty, self.expr(env + ((Var(x), ty),), ty, eps, s2))
        return Iter(nat(self.rng.randint(0, 3)), self.expr(env, ty, eps, s1), step)

    def fold(self, env, ty, eps, size):
        s0, s1, s2 = self.split(size, 3)
        elem = self.rng.choice((LOSS, LOSS, BOOL))
        x = self.fresh("x")
        pt = Product((elem, ty))
        step = Lam(eps, x, pt, self.expr(env + ((Proj(Var(x), 0), elem), (Proj(Var(x), 1), ty)), ty, eps, s2))
        return Fold(self.expr(env, ListT(elem), eps, s0), self.expr(env, ty, eps, s1), step)

    def handle(self, env, ty, eps, size):
        rng = self.rng
        label = rng.choice(sorted(self.sig.effects))
        par = rng.choice(_PARAM_TYS)
        ops = self.sig.ops_of(label)
        sigma = rng.choice([s.in_ty for s in ops] + [self.ground()])
        sizes = self.split(size, 3 + len(ops))
        s_par, s_body, s_ret = sizes[0], sizes[1] + 2, sizes[2]
        hot = self.hot
        self.hot = hot | {label}
        body = self.handled_body(env, sigma, eps.add(label), s_body, ops)
        self.hot = hot
        clauses = []
        for s, sz in zip(ops, sizes[3:]):
            z = self.fresh("z")
            l_ty = Fn(Product((par, s.in_ty)), LOSS, eps)
            k_ty = Fn(Product((par, s.in_ty)), ty, eps)
            zv = Var(z)
            env2 = env + ((Proj(zv, 0), par), (Proj(zv, 1), s.out_ty), (Proj(zv, 2), l_ty), (Proj(zv, 3), k_ty))
            binder = Product((par, s.out_ty, l_ty, k_ty))
            clauses.append((s.name, Lam(eps, z, binder, self.clause_body(env2, zv, par, s.in_ty, ty, eps, sz + 1))))
        z = self.fresh("z")
        zv = Var(z)
        env_r = env + ((Proj(zv, 0), par), (Proj(zv, 1), sigma))
        ret = Lam(eps, z, Product((par, sigma)), self.expr(env_r, ty, eps, s_ret))
        h = Handler(label, par, tuple(clauses), ret, eps)
        return Handle(h, self.expr(env, par, eps, s_par), body)


    def handled_body(self, env, sigma, eps, size, ops):
        """A handled computation that performs at least one of `ops` most of the time."""
        if self.rng.random() < 0.3:
            return self.expr(env, sigma, eps, size)
        s = self.rng.choice(ops)
        s1, s2 = self.split(size, 2)
        call = OpCall(s.name, self.expr(env, s.out_ty, eps, max(1, s1 - 1)))
        if s.in_ty == sigma and self.rng.random() < 0.3:
            return call
        x = self.fresh("x")
        rest = self.expr(env + ((Var(x), s.in_ty),), sigma, eps, s2)
        return App(Lam(eps, x, s.in_ty, rest), call)

    def clause_body(self, env, zv, par, in_ty, ty, eps, size):
        """An operation clause; most resume the continuation, some after consulting l."""
        rng = self.rng
        r = rng.random()
        if r < 0.25:
            return self.expr(env, ty, eps, size)

        def resume(sz):
            p = Proj(zv, 0) if rng.random() < 0.7 else self.expr(env, par, eps, 1)
            return App(Proj(zv, 3), Tuple((p, self.expr(env, in_ty, eps, max(1, sz)))))

        if r < 0.6:
            return resume(size - 2)
        if r < 0.8:
            a, b = self.literal(env, in_ty), self.literal(env, in_ty)
            cmp = PrimApp(rng.choice(("lt", "leq")), Tuple((
                App(Proj(zv, 2), Tuple((Proj(zv, 0), a))),
                App(Proj(zv, 2), Tuple((Proj(zv, 0), b))),
            )))
            u = self.fresh("u")
            return Cases(cmp, u, UNIT, App(Proj(zv, 3), Tuple((Proj(zv, 0), a))),
                         self.fresh("u"), UNIT, App(Proj(zv, 3), Tuple((Proj(zv, 0), b))))
        x = self.fresh("x")
        first = resume(1)
        return App(Lam(eps, x, ty, self.expr(env + ((Var(x), ty),), ty, eps, max(1, size - 4))), first)


def gen_effect(rng: random.Random, sig: Signature) -> Effect:
    labels = []
    for label in sorted(sig.effects):
        r = rng.random()
        if r < 0.35:
            labels.append(label)
        elif r < 0.42:
            labels += [label, label]
    return Effect(labels)


def gen_term(seed: int, size: int, sig: Signature = DEFAULT_SIG) -> tuple[Expr, Type, Effect]:
    """A closed term of at most `size` nodes, its first-order type and its ambient effect."""
    rng = random.Random(seed)
    for attempt in range(100):
        eps = gen_effect(rng, sig)
        ty = rng.choices(GROUND, _GROUND_W)[0]
        g = TermGen(rng, sig)
        budget = max(1, int(size * 0.9 ** attempt))
        if budget >= 8 and rng.random() < 0.45:
            e = g.handle((), ty, eps, budget)
        else:
            e = g.expr((), ty, eps, budget)
        if term_size(e) <= size:
            tc.check(None, e, ty, eps, sig)
            return e, ty, eps
    e = TermGen(rng, sig).literal((), ty)
    return e, ty, eps


def gen_loss_cont(seed: int, ty: Type, eps: Effect, sig: Signature = DEFAULT_SIG, size: int = 4):
    """A closed loss continuation for results of type ty."""
    rng = random.Random(seed)
    g = TermGen(rng, sig)
    c = g.loss_cont((), ty, eps, size)
    tc.check_loss_cont(c, ty, eps, sig)
    return c


# ---------------------------------------------------------------------------
# Shrinking


def subterms(e: Expr):
    """Immediate expression children (lambda bodies included)."""
    match e:
        case PrimApp(_, a) | Proj(a, _) | Inl(_, _, a) | Inr(_, _, a) | Succ(a) | OpCall(_, a) | Loss(a) | Reset(a):
            return [a]
        case Lam(_, _, _, b):
            return [b]
        case App(a, b) | Cons(a, b):
            return [a, b]
        case Tuple(items):
            return list(items)
        case Cases(s, _, _, e1, _, _, e2):
            return [s, e1, e2]
        case Iter(a, b, c) | Fold(a, b, c):
            return [a, b, c]
        case Handle(_, p, b):
            return [p, b]
        case Then(_, a, lam):
            return [a, lam.body]
        case GLocal(_, b, _):
            return [b]
    return []


def _replace_child(e: Expr, i: int, new: Expr) -> Expr:
    match e:
        case PrimApp(p, _):
            return PrimApp(p, new)
        case Proj(_, k):
            return Proj(new, k)
        case Inl(a, b, _):
            return Inl(a, b, new)
        case Inr(a, b, _):
            return Inr(a, b, new)
        case Succ(_):
            return Succ(new)
        case OpCall(op, _):
            return OpCall(op, new)
        case Loss(_):
            return Loss(new)
        case Reset(_):
            return Reset(new)
        case Lam(eff, x, t, _):
            return Lam(eff, x, t, new)
        case App(a, b):
            return App(new, b) if i == 0 else App(a, new)
        case Cons(a, b):
            return Cons(new, b) if i == 0 else Cons(a, new)
        case Tuple(items):
            return Tuple(items[:i] + (new,) + items[i + 1:])
        case Cases(s, x1, t1, e1, x2, t2, e2):
            parts = [s, e1, e2]
            parts[i] = new
            return Cases(parts[0], x1, t1, parts[1], x2, t2, parts[2])
        case Iter(a, b, c):
            parts = [a, b, c]
            parts[i] = new
            return Iter(*parts)
        case Fold(a, b, c):
            parts = [a, b, c]
            parts[i] = new
            return Fold(*parts)
        case Handle(h, p, b):
            return Handle(h, new, b) if i == 0 else Handle(h, p, new)
        case Then(eff, a, lam):
            if i == 0:
                return Then(eff, new, lam)
            return Then(eff, a, Lam(lam.eff, lam.var, lam.var_ty, new))
        case GLocal(eff, _, c):
            return GLocal(eff, new, c)
    raise ValueError("no such child")


def _positions(e: Expr, path=()):
    yield path, e
    for i, c in enumerate(subterms(e)):
        yield from _positions(c, path + (i,))


def _replace_at(e: Expr, path, new: Expr) -> Expr:
    if not path:
        return new
    i = path[0]
    return _replace_child(e, i, _replace_at(subterms(e)[i], path[1:], new))


def shrink_candidates(e: Expr):
    """Hole replacements of each position by one of its own subterms, smallest first."""
    out = []
    for path, sub in _positions(e):
        for inner_path, inner in _positions(sub):
            if inner_path:
                out.append(_replace_at(e, path, inner))
    out.sort(key=term_size)
    return out


def shrink(e: Expr, ty: Type, eps: Effect, fails, sig: Signature = DEFAULT_SIG, rounds: int = 50) -> Expr:
    """Greedy shrinking: keep any well-typed smaller candidate on which `fails` still holds."""
    for _ in range(rounds):
        size = term_size(e)
        for cand in shrink_candidates(e):
            if term_size(cand) >= size or not tc.checks(None, cand, ty, eps, sig):
                continue
            try:
                still = fails(cand)
            except Exception:
                still = False
            if still:
                e = cand
                break
        else:
            return e
    return e
