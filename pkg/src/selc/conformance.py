"""Differential testing of the operational semantics against the denotational one.

Trees are compared by probing: node heads must agree and children are
compared at a finite set of in-values.  Every check raises `MismatchError`
on the first disagreement and returns None otherwise.

The fragment filter: two families of programs are known to separate the
semantics (a nonzero loss exported through a handler before that handler
catches an operation, and a resumption with a changed parameter feeding a
return clause that reads it).  The frame-stack machine counts both, and
`in_fragment` runs are the ones the soundness checks apply to.
"""

from __future__ import annotations

import itertools
import json
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import loss as L
from . import operational as op
from . import typecheck as tc
from .denotational import (
    ConstV,
    Denotation,
    FnV,
    Leaf,
    ListV,
    NatV,
    Node,
    SemValue,
    TagV,
    Tree,
    TupleV,
    render_sem,
    w_action,
)
from .gen import DEFAULT_SIG, gen_loss_cont, gen_term, shrink, term_size
from .pretty import print_effect, print_expr, print_type
from .syntax import (
    LOSS,
    Base,
    Const,
    Cons,
    Effect,
    Expr,
    Fn,
    Inl,
    Inr,
    Lam,
    ListT,
    LossCont,
    Nat,
    Nil,
    OpCall,
    Product,
    Signature,
    Sum,
    Tuple,
    Type,
    hole_ambient,
    nat,
)

DEFAULT_TOL = 1e-9
PROBE_CAP = 16

# ---------------------------------------------------------------------------
# Probes


@dataclass(frozen=True)
class ProbeSet:
    seed: int = 0
    N: int = 3
    L: int = 2
    losses: tuple[float, ...] = (0.0, 1.0, -2.5, 0.5)
    depth: int = 3
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def parse(cls, text: str) -> ProbeSet:
        """`seed,N,L` as accepted by the command line."""
        parts = [int(x) for x in text.split(",")]
        if len(parts) != 3:
            raise ValueError("probes are given as seed,N,L")
        return cls(seed=parts[0], N=parts[1], L=parts[2])

    def values(self, ty: Type, dim: int = 1) -> list[Expr]:
        key = (ty, dim)
        got = self._cache.get(key)
        if got is None:
            got = self._cache[key] = self._values(ty, dim)
        return got

    def _rng(self, ty: Type) -> random.Random:
        return random.Random(f"{self.seed}:{ty!r}")

    def _cap(self, ty: Type, vals: list) -> list:
        if len(vals) <= PROBE_CAP:
            return vals
        rng = self._rng(ty)
        idx = sorted(rng.sample(range(len(vals)), PROBE_CAP))
        return [vals[i] for i in idx]

    def _values(self, ty: Type, dim: int) -> list[Expr]:
        match ty:
            case Base("loss"):
                vals = [(x,) * dim for x in self.losses]
                if dim > 1:
                    rng = self._rng(ty)
                    vals += [tuple(rng.choice(self.losses) for _ in range(dim)) for _ in range(2)]
                return [Const(v, LOSS) for v in vals]
            case Base("char"):
                return [Const("a", ty), Const("b", ty)]
            case Base("str"):
                return [Const("", ty), Const("ab", ty)]
            case Base(name):
                return [Const(f"{name}0", ty)]
            case Nat():
                return [nat(n) for n in range(self.N + 1)]
            case Product(items):
                parts = [self.values(t, dim) for t in items]
                return self._cap(ty, [Tuple(c) for c in itertools.product(*parts)])
            case Sum(a, b):
                vals = [Inl(a, b, v) for v in self.values(a, dim)] + [Inr(a, b, v) for v in self.values(b, dim)]
                return self._cap(ty, vals)
            case ListT(t):
                elems = self.values(t, dim)
                vals = []
                for n in range(self.L + 1):
                    for combo in itertools.product(elems, repeat=n):
                        out: Expr = Nil(t)
                        for v in reversed(combo):
                            out = Cons(v, out)
                        vals.append(out)
                return self._cap(ty, vals)
            case Fn(a, b, eff):
                return [Lam(eff, "_", a, v) for v in self.values(b, dim)[:3]]
        raise TypeError(f"cannot probe {ty}")


DEFAULT_PROBES = ProbeSet()

# ---------------------------------------------------------------------------
# Mismatches


@dataclass
class Mismatch:
    program: str
    stage: str
    path: tuple = ()
    lhs: str = ""
    rhs: str = ""
    tolerance: float = DEFAULT_TOL
    seed: int | None = None
    detail: str = ""

    def __str__(self):
        where = "/".join(str(p) for p in self.path) or "root"
        return f"{self.stage} mismatch at {where}: {self.lhs} vs {self.rhs}" + (f" ({self.detail})" if self.detail else "")


class MismatchError(Exception):
    def __init__(self, mismatch: Mismatch):
        self.mismatch = mismatch
        super().__init__(str(mismatch))


def sem_close(a: SemValue, b: SemValue, tol: float) -> bool:
    """Equality of first-order semantic values; any two functions count as equal."""
    match a, b:
        case ConstV(x, t), ConstV(y, u):
            if t != u:
                return False
            if t == LOSS:
                return L.close(x, y, tol)
            return x == y
        case (TupleV(xs), TupleV(ys)) | (ListV(xs), ListV(ys)):
            return len(xs) == len(ys) and all(sem_close(x, y, tol) for x, y in zip(xs, ys))
        case TagV(s, x), TagV(t, y):
            return s == t and sem_close(x, y, tol)
        case NatV(m), NatV(n):
            return m == n
        case FnV(), FnV():
            return True
    return False


def _leaf_close(x, y, tol: float) -> bool:
    rx = isinstance(x, tuple) and (not x or not isinstance(x[0], tuple))
    ry = isinstance(y, tuple) and (not y or not isinstance(y[0], tuple))
    if rx or ry:
        return rx and ry and L.close(x, y, tol)
    return L.close(x[0], y[0], tol) and sem_close(x[1], y[1], tol)


def _show_leaf(x) -> str:
    if x and isinstance(x[0], tuple):
        return f"Leaf({L.fmt(x[0])}, {render_sem(x[1])})"
    return f"Leaf({L.fmt(x)})"


def _show_head(t: Tree) -> str:
    if isinstance(t, Leaf):
        return _show_leaf(t.value)
    return f"Node({t.label}, {t.op}, {t.index}, {render_sem(t.out)})"


class Prober:
    """Semantic probe values per operation in-type."""

    def __init__(self, sig: Signature, probes: ProbeSet = DEFAULT_PROBES, den: Denotation | None = None):
        self.sig = sig
        self.probes = probes
        self.den = den or Denotation(sig)
        self._sem: dict[str, list[tuple[Expr, SemValue]]] = {}

    def pairs(self, opname: str) -> list[tuple[Expr, SemValue]]:
        got = self._sem.get(opname)
        if got is None:
            in_ty = self.sig.op(opname).in_ty
            vals = self.probes.values(in_ty, self.sig.loss_dim)
            got = self._sem[opname] = [(v, self.den.value({}, v)) for v in vals]
        return got

    def sems(self, opname: str) -> list[SemValue]:
        return [s for _, s in self.pairs(opname)]


def _diff(t1: Tree, t2: Tree, prober: Prober, tol: float, depth: int, path: tuple):
    if isinstance(t1, Leaf) or isinstance(t2, Leaf):
        if isinstance(t1, Leaf) and isinstance(t2, Leaf) and _leaf_close(t1.value, t2.value, tol):
            return None
        return path, _show_head(t1), _show_head(t2)
    if (t1.label, t1.op, t1.index) != (t2.label, t2.op, t2.index) or not sem_close(t1.out, t2.out, tol):
        return path, _show_head(t1), _show_head(t2)
    if depth <= 0:
        return None
    for a in prober.sems(t1.op):
        d = _diff(t1.child(a), t2.child(a), prober, tol, depth - 1, path + (render_sem(a),))
        if d is not None:
            return d
    return None


def tree_equal(t1: Tree, t2: Tree, probes: ProbeSet | Prober = DEFAULT_PROBES, tol: float = DEFAULT_TOL,
               sig: Signature | None = None, depth: int | None = None) -> bool:
    prober = probes if isinstance(probes, Prober) else Prober(sig or DEFAULT_SIG, probes)
    d = prober.probes.depth if depth is None else depth
    return _diff(t1, t2, prober, tol, d, ()) is None


def assert_tree_equal(t1: Tree, t2: Tree, prober: Prober, tol: float, program: str, stage: str,
                      depth: int | None = None, detail: str = "") -> None:
    d = prober.probes.depth if depth is None else depth
    res = _diff(t1, t2, prober, tol, d, ())
    if res is not None:
        path, lhs, rhs = res
        raise MismatchError(Mismatch(program, stage, path, lhs, rhs, tol, detail=detail))


# ---------------------------------------------------------------------------
# The three checks


def _gamma_sem(den: Denotation, gamma: LossCont):
    return den.loss_fn({}, gamma.to_lam())


def check_step_soundness(e: Expr, gamma: LossCont, eps: Effect, sig: Signature, probes: ProbeSet = DEFAULT_PROBES,
                         tol: float = DEFAULT_TOL, fuel: int = op.DEFAULT_FUEL, steps=None) -> int:
    """⟦e⟧L⟦γ⟧ = r·⟦e'⟧L⟦γ⟧ for every step of the trace.  Returns the number of steps checked."""
    den = Denotation(sig)
    prober = Prober(sig, probes, den)
    g = _gamma_sem(den, gamma)
    if steps is None:
        steps = op.trace(gamma, eps, e, sig, fuel)
    cur = den.expr({}, e, eps).run(g)
    prev = e
    for i, (rule, r, nxt) in enumerate(steps):
        after = den.expr({}, nxt, eps).run(g)
        assert_tree_equal(cur, w_action(r, after), prober, tol, print_expr(prev), "step",
                          detail=f"step {i} [{rule}] loss={L.fmt(r)}")
        cur, prev = after, nxt
    return len(steps)


def check_eval_soundness(e: Expr, gamma: LossCont, eps: Effect, sig: Signature, probes: ProbeSet = DEFAULT_PROBES,
                         tol: float = DEFAULT_TOL, fuel: int = op.DEFAULT_FUEL, result: op.EvalResult | None = None) -> None:
    """Big-step results against the denotation, including the head of a stuck term."""
    den = Denotation(sig)
    prober = Prober(sig, probes, den)
    g = _gamma_sem(den, gamma)
    if result is None:
        result = op.big_eval_report(gamma, eps, e, sig, fuel)
    r, w = result.loss, result.terminal
    prog = print_expr(e)
    t = den.expr({}, e, eps).run(g)
    if isinstance(w, op.Val):
        want = Leaf((r, den.value({}, w.value)))
        assert_tree_equal(t, want, prober, tol, prog, "eval")
        return
    stuck = w.plugged(OpCall(w.op, w.arg))
    ts = den.expr({}, stuck, eps).run(g)
    label = sig.label_of(w.op)
    index = (hole_ambient(w.K) or eps).count(label)
    out = den.value({}, w.arg)
    head_ok = isinstance(ts, Node) and (ts.label, ts.op, ts.index) == (label, w.op, index) and sem_close(ts.out, out, tol)
    if not head_ok:
        raise MismatchError(Mismatch(prog, "eval", (), _show_head(ts), f"Node({label}, {w.op}, {index}, {render_sem(out)})",
                                     tol, detail="stuck head"))
    for v, a in prober.pairs(w.op):
        child = den.expr({}, w.plugged(v), eps).run(g)
        assert_tree_equal(ts.child(a), child, prober, tol, prog, "eval", depth=prober.probes.depth - 1,
                          detail=f"stuck child at {render_sem(a)}")
    assert_tree_equal(t, w_action(r, ts), prober, tol, prog, "eval")


def _relate(gv: op.GiantValue, t: Tree, prober: Prober, den: Denotation, tol: float, depth: int, path: tuple):
    if isinstance(gv, op.Done):
        if isinstance(t, Leaf) and _leaf_close((gv.loss, den.value({}, gv.value)), t.value, tol):
            return None
        return path, f"Done({L.fmt(gv.loss)}, {print_expr(gv.value)})", _show_head(t)
    head = f"OpNode({gv.label}, {gv.op}, {gv.index}, {print_expr(gv.arg)})"
    if not isinstance(t, Node) or (t.label, t.op, t.index) != (gv.label, gv.op, gv.index):
        return path, head, _show_head(t)
    if not sem_close(den.value({}, gv.arg), t.out, tol):
        return path, head, _show_head(t)
    if depth <= 0:
        return None
    for v, a in prober.pairs(gv.op):
        d = _relate(gv.resume(v), t.child(a), prober, den, tol, depth - 1, path + (render_sem(a),))
        if d is not None:
            return d
    return None


def check_giant_adequacy(e: Expr, gamma: LossCont, eps: Effect, sig: Signature, probes: ProbeSet = DEFAULT_PROBES,
                         depth: int | None = None, tol: float = DEFAULT_TOL, fuel: int = op.DEFAULT_FUEL,
                         stats: op.EvalStats | None = None) -> None:
    """The giant-step effect value is related to the denotation, to the given resume depth."""
    den = Denotation(sig)
    prober = Prober(sig, probes, den)
    g = _gamma_sem(den, gamma)
    gv = op.giant_eval(gamma, eps, e, sig, fuel, stats)
    t = den.expr({}, e, eps).run(g)
    d = probes.depth if depth is None else depth
    res = _relate(gv, t, prober, den, tol, d, ())
    if res is not None:
        path, lhs, rhs = res
        raise MismatchError(Mismatch(print_expr(e), "giant", path, lhs, rhs, tol))


def giant_fragment_stats(e: Expr, gamma: LossCont, eps: Effect, sig: Signature, probes: ProbeSet = DEFAULT_PROBES,
                         depth: int | None = None, fuel: int = op.DEFAULT_FUEL) -> op.EvalStats:
    """Machine statistics over every run the giant-step check performs."""
    prober = Prober(sig, probes)
    stats = op.EvalStats()
    gv = op.giant_eval(gamma, eps, e, sig, fuel, stats)

    def walk(g, d):
        if isinstance(g, op.OpNode) and d > 0:
            for v, _ in prober.pairs(g.op):
                walk(g.resume(v), d - 1)

    walk(gv, probes.depth if depth is None else depth)
    return stats


# ---------------------------------------------------------------------------
# Metatheory properties


def check_properties(e: Expr, ty: Type, gamma: LossCont, eps: Effect, sig: Signature,
                     fuel: int = 10**6) -> tuple[op.EvalResult, list]:
    """Determinism, progress and preservation.  Returns the machine result and the reference trace."""
    prog = print_expr(e)
    try:
        res = op.big_eval_report(gamma, eps, e, sig, fuel)
        again = op.big_eval_report(gamma, eps, e, sig, fuel)
        steps = op.trace(gamma, eps, e, sig, fuel)
    except op.FuelExhausted as exc:
        raise MismatchError(Mismatch(prog, "fuel", detail=str(exc))) from exc
    except Exception as exc:  # an ill-formed redex is a progress failure
        raise MismatchError(Mismatch(prog, "progress", detail=f"{type(exc).__name__}: {exc}")) from exc
    if (res.loss, res.terminal, res.stats.steps) != (again.loss, again.terminal, again.stats.steps):
        raise MismatchError(Mismatch(prog, "determinism", (), str(res.terminal), str(again.terminal)))
    total = L.zero(sig.loss_dim)
    last = e
    for rule, r, nxt in steps:
        total = L.add(total, r)
        if not tc.checks(None, nxt, ty, eps, sig):
            raise MismatchError(Mismatch(prog, "preservation", (), print_expr(last), print_expr(nxt), detail=rule))
        last = nxt
    term = op.terminal_of(last, eps)
    if term is None:
        raise MismatchError(Mismatch(prog, "progress", (), print_expr(last), "terminal"))
    if len(steps) != res.stats.steps or term != res.terminal or not L.close(total, res.loss, DEFAULT_TOL):
        raise MismatchError(Mismatch(prog, "determinism", (), f"machine {L.fmt(res.loss)} in {res.stats.steps}",
                                     f"reference {L.fmt(total)} in {len(steps)}"))
    return res, steps


# ---------------------------------------------------------------------------
# Campaigns


@dataclass
class FuzzCase:
    seed: int
    size: int
    expr: Expr
    ty: Type
    eps: Effect
    gamma: LossCont


def make_case(seed: int, max_size: int = 25, sig: Signature = DEFAULT_SIG) -> FuzzCase:
    rng = random.Random(seed * 7919 + 1)
    size = min(max_size, int(rng.triangular(1, max_size + 1, max_size + 1)))
    e, ty, eps = gen_term(seed, size, sig)
    if rng.random() < 0.3:
        gamma = gen_loss_cont(seed, ty, eps, sig)
    else:
        gamma = op.zero_cont(eps, ty, sig)
    return FuzzCase(seed, size, e, ty, eps, gamma)


@dataclass
class FuzzReport:
    accepted: int = 0
    rejected_dirty: int = 0
    rejected_reparam: int = 0
    stuck: int = 0
    steps_checked: int = 0
    failures: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        return (f"accepted {self.accepted}, stuck {self.stuck}, rejected outside fragment "
                f"{self.rejected_dirty} dirty + {self.rejected_reparam} reparam, "
                f"{self.steps_checked} steps, {len(self.failures)} failures, {self.seconds:.1f}s")


def _fragment_reject(stats: op.EvalStats, report: FuzzReport) -> bool:
    if stats.dirty_r5:
        report.rejected_dirty += 1
        return True
    if stats.reparam_r5:
        report.rejected_reparam += 1
        return True
    return False


def run_case(case: FuzzCase, sig: Signature, report: FuzzReport, probes: ProbeSet = DEFAULT_PROBES,
             tol: float = DEFAULT_TOL, fuel: int = 10**6, stages=("props", "step"), depth: int | None = None) -> bool:
    """Run the requested checks on one case.  Returns False if the case lies outside the fragment."""
    try:
        res, steps = check_properties(case.expr, case.ty, case.gamma, case.eps, sig, fuel)
        if _fragment_reject(res.stats, report):
            return False
        if "giant" in stages and isinstance(res.terminal, op.StuckOp):
            gstats = giant_fragment_stats(case.expr, case.gamma, case.eps, sig, probes, depth, fuel)
            if _fragment_reject(gstats, report):
                return False
        report.accepted += 1
        if isinstance(res.terminal, op.StuckOp):
            report.stuck += 1
        if "step" in stages:
            report.steps_checked += check_step_soundness(case.expr, case.gamma, case.eps, sig, probes, tol, fuel, steps)
        if "eval" in stages:
            check_eval_soundness(case.expr, case.gamma, case.eps, sig, probes, tol, fuel, res)
        if "giant" in stages:
            check_giant_adequacy(case.expr, case.gamma, case.eps, sig, probes, depth, tol, fuel)
    except MismatchError as err:
        err.mismatch.seed = case.seed
        report.failures.append((case, err.mismatch))
    return True


def fuzz(count: int, seed: int = 0, max_size: int = 25, sig: Signature = DEFAULT_SIG, probes: ProbeSet = DEFAULT_PROBES,
         tol: float = DEFAULT_TOL, fuel: int = 10**6, stages=("props", "step"), depth: int | None = None,
         max_seconds: float | None = None) -> FuzzReport:
    """Check cases from consecutive seeds until `count` of them lie in the fragment."""
    report = FuzzReport()
    start = time.monotonic()
    s = seed
    while report.accepted < count:
        run_case(make_case(s, max_size, sig), sig, report, probes, tol, fuel, stages, depth)
        s += 1
        if max_seconds is not None and time.monotonic() - start > max_seconds:
            break
    report.seconds = time.monotonic() - start
    return report


def _fuzz_chunk(args):
    count, seed, max_size, stages, depth, tol, fuel, probes = args
    return fuzz(count, seed, max_size, DEFAULT_SIG, probes, tol, fuel, stages, depth)


def fuzz_parallel(count: int, jobs: int, seed: int = 0, max_size: int = 25, probes: ProbeSet = DEFAULT_PROBES,
                  tol: float = DEFAULT_TOL, fuel: int = 10**6, stages=("props", "step"), depth: int | None = None) -> FuzzReport:
    """Split the campaign over worker processes by seed ranges; one report merges them."""
    if jobs <= 1:
        return fuzz(count, seed, max_size, DEFAULT_SIG, probes, tol, fuel, stages, depth)
    from concurrent.futures import ProcessPoolExecutor

    per = math.ceil(count / jobs)
    stride = per * 10
    args = [(min(per, count - i * per), seed + i * stride, max_size, stages, depth, tol, fuel, probes)
            for i in range(jobs) if count - i * per > 0]
    start = time.monotonic()
    merged = FuzzReport()
    with ProcessPoolExecutor(jobs) as pool:
        for rep in pool.map(_fuzz_chunk, args):
            for k in ("accepted", "rejected_dirty", "rejected_reparam", "stuck", "steps_checked"):
                setattr(merged, k, getattr(merged, k) + getattr(rep, k))
            merged.failures += rep.failures
    merged.seconds = time.monotonic() - start
    return merged


# ---------------------------------------------------------------------------
# Failure corpus


def _decl_type(ty: Type) -> str:
    text = print_type(ty)
    return f"({text})" if isinstance(ty, Fn) else text


def program_text(e: Expr, ty: Type, eps: Effect, sig: Signature, gamma: LossCont | None = None) -> str:
    """A source file for e that re-parses to the same kernel term."""
    lines = []
    if sig.loss_dim != 1:
        lines.append(f"loss_dim {sig.loss_dim}")
    for label, ops in sig.effects.items():
        decls = ", ".join(f"{s.name} : {_decl_type(s.out_ty)} -> {_decl_type(s.in_ty)}" for s in ops)
        lines.append(f"effect {label} {{ {decls} }}")
    if gamma is not None and not isinstance(gamma, op.ZeroCont):
        lines.append(f"-- loss continuation: {print_expr(gamma.to_lam())}")
    lines.append(f"-- type: {print_type(ty)}")
    lines.append(f"main ! {print_effect(eps)} = {print_expr(e)}")
    return "\n".join(lines) + "\n"


def save_failures(report: FuzzReport, directory: Path, sig: Signature = DEFAULT_SIG, max_size: int = 25,
                  tol: float = DEFAULT_TOL, probes: ProbeSet = DEFAULT_PROBES, shrink_failures: bool = True) -> Path:
    """Persist each failure (shrunk when it still fails) as a .selc file plus a JSON manifest."""
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for case, mm in report.failures:
        e = case.expr
        if shrink_failures:
            def still_fails(cand, case=case):
                rep = FuzzReport()
                sub = FuzzCase(case.seed, case.size, cand, case.ty, case.eps, case.gamma)
                run_case(sub, sig, rep, probes, tol, stages=("props", "step", "eval", "giant"))
                return bool(rep.failures)

            e = shrink(e, case.ty, case.eps, still_fails, sig)
        name = f"seed{case.seed}.selc"
        (directory / name).write_text(program_text(e, case.ty, case.eps, sig, case.gamma), encoding="utf-8")
        entries.append({
            "file": name,
            "seed": case.seed,
            "size": case.size,
            "shrunk_size": term_size(e),
            "stage": mm.stage,
            "message": str(mm),
        })
    manifest = {
        "max_size": max_size,
        "tolerance": tol,
        "probes": {"seed": probes.seed, "N": probes.N, "L": probes.L, "depth": probes.depth},
        "failures": entries,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def replay(manifest_path: Path, fuel: int = 10**6) -> FuzzReport:
    """Re-run every case of a failure manifest from its seed."""
    manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    tol = manifest.get("tolerance", DEFAULT_TOL)
    p = manifest.get("probes", {})
    probes = ProbeSet(seed=p.get("seed", 0), N=p.get("N", 3), L=p.get("L", 2), depth=p.get("depth", 3))
    report = FuzzReport()
    for ent in manifest["failures"]:
        case = make_case(ent["seed"], manifest.get("max_size", 25))
        run_case(case, DEFAULT_SIG, report, probes, tol, fuel, stages=("props", "step", "eval", "giant"))
    return report
