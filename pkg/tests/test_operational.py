import math

import pytest
from hypothesis import given, settings, strategies as st

from conftest import eff, expr, prog
from selc import loss as L
from selc.conformance import DEFAULT_SIG, check_properties
from selc.gen import gen_term
from selc.operational import (
    Done, FuelExhausted, OpNode, StuckOp, Val, big_eval, giant_eval, run_program, small_step_eval, step, trace,
    zero_cont,
)
from selc.pretty import render_value
from selc.stdlib import fixture_path, load_program
from selc.syntax import (
    BOOL, EMPTY, LOSS, TRUE, UNIT, UNIT_V, App, GLocal, Lam, LamCont, Then, Tuple, char, loss_const,
)

DEFECT_A = """effect ndet { decide : () -> bool }
def h = handler ndet : loss => loss ! {} {
    decide(x, l, k) => k(true) + k(false)
  | return(x) => 0.0
}
main ! {} = handle h with loss(1.0); b <- decide(()); 0.0
"""

DEFECT_B = """effect ndet { decide : () -> bool }
effect pick { choose : () -> bool }
def h = handler ndet [loss] : loss => loss ! {} {
    decide(p, x, l, k) => k(p - 2.0, true)
  | return(p, x) => loss(p * x); x
}
def g = handler pick : loss => loss ! {ndet} {
    choose(x, l, k) => a <- l(true); b <- l(false); if a <= b then k(true) else k(false)
  | return(x) => x
}
main ! {} = handle h 0.0 with b <- decide(()); handle g with c <- choose(()); loss(if c then 0.5 else 0.0); if c then 1.0 else -1.0
"""


def g0(ty=UNIT, e=EMPTY):
    return zero_cont(e, ty, DEFAULT_SIG)


def test_step_loss_and_value(ndet_sig):
    o = step(g0(), EMPTY, expr("loss(2.0)", ndet_sig), ndet_sig)
    assert (o.loss, o.next, o.rule) == ((2.0,), UNIT_V, "R4")
    assert step(g0(), EMPTY, char("a"), ndet_sig) is None


def test_first_step_of_overview_builds_both_continuations():
    p = load_program(fixture_path("overview"))
    gamma = zero_cont(p.main_eff, p.main_ty, p.signature)
    o = step(gamma, p.main_eff, p.main, p.signature)
    assert o.rule == "R5" and o.loss == (0.0,)
    clause_arg = o.next.arg
    assert isinstance(o.next, App) and isinstance(clause_arg, Tuple)
    par, x, f_l, f_k = clause_arg.items
    assert par == UNIT_V and x == UNIT_V
    # f_l = \(p, y). (h<p>(K[y])) |> gamma, f_k = \(p, y). local<h<p>(K[y])>{gamma}
    assert isinstance(f_l, Lam) and isinstance(f_l.body, Then)
    assert isinstance(f_k, Lam) and isinstance(f_k.body, GLocal)
    assert f_k.body.cont == gamma


def test_big_eval_examples(ndet_sig):
    p = load_program(fixture_path("minimax"))
    r, w = big_eval(zero_cont(EMPTY, p.main_ty, p.signature), EMPTY, p.main, p.signature)
    assert r == (3.0,) and render_value(w.value) == "(true, false)"
    e = expr("decide(())", ndet_sig, eff("ndet"))
    r, w = big_eval(g0(BOOL, eff("ndet")), eff("ndet"), e, ndet_sig)
    assert r == (0.0,) and w == StuckOp((), "decide", UNIT_V)


def test_giant_eval_examples(ndet_sig):
    v = loss_const(1.5)
    assert giant_eval(g0(LOSS), EMPTY, v, ndet_sig) == Done((0.0,), v)
    e = expr("x <- decide(()); loss(1.0); x", ndet_sig, eff("ndet"))
    g = giant_eval(g0(BOOL, eff("ndet")), eff("ndet"), e, ndet_sig)
    assert isinstance(g, OpNode) and (g.label, g.op, g.index, g.arg) == ("ndet", "decide", 1, UNIT_V)
    assert g.resume(TRUE) == Done((1.0,), TRUE)
    p = load_program(fixture_path("overview"))
    assert giant_eval(zero_cont(EMPTY, p.main_ty, p.signature), EMPTY, p.main, p.signature) == Done((2.0,), char("a"))


def test_trace_examples(ndet_sig):
    assert trace(g0(), EMPTY, expr("loss(2.0)", ndet_sig), ndet_sig) == [("R4", (2.0,), UNIT_V)]
    t = trace(g0(LOSS), EMPTY, expr("(\\^{} x : loss. x) 3.0", ndet_sig), ndet_sig)
    assert t == [("R3", (0.0,), loss_const(3.0))]


def test_overview_trace_shape():
    p = load_program(fixture_path("overview"))
    tr = trace(zero_cont(EMPTY, p.main_ty, p.signature), EMPTY, p.main, p.signature)
    assert tr[0][0] == "R5"
    assert any(rule.startswith("F/") for rule, _, _ in tr[1:5])
    assert sum(r[0] for _, r, _ in tr) == 2.0
    res = run_program(p.main, p.main_ty, EMPTY, p.signature)
    assert res.stats.steps == len(tr)


def test_then_and_reset_rules(ndet_sig):
    e = expr("(loss(2.0); 1.0) |>^{} (\\^{} y : loss. y + 1.0)", ndet_sig)
    r, w = big_eval(g0(LOSS), EMPTY, e, ndet_sig)
    assert r == (0.0,) and w == Val(loss_const(4.0))
    e = expr("reset (loss(2.0); 1.0)", ndet_sig)
    r, w = big_eval(g0(LOSS), EMPTY, e, ndet_sig)
    assert r == (0.0,) and w == Val(loss_const(1.0))
    e = expr("local (loss(2.0); 1.0)", ndet_sig)
    r, w = big_eval(g0(LOSS), EMPTY, e, ndet_sig)
    assert r == (2.0,)


def test_division_by_zero_is_ieee(ndet_sig):
    _, w = big_eval(g0(LOSS), EMPTY, expr("1.0 / 0.0", ndet_sig), ndet_sig)
    assert w.value.value[0] == math.inf
    _, w = big_eval(g0(LOSS), EMPTY, expr("0.0 / 0.0", ndet_sig), ndet_sig)
    assert math.isnan(w.value.value[0])


def test_cow_exhausts_fuel():
    p = load_program(fixture_path("cow"))
    with pytest.raises(FuelExhausted) as info:
        run_program(p.main, p.main_ty, p.main_eff, p.signature, fuel=5000)
    assert info.value.steps == 5000


def test_defect_a_is_flagged():
    # the loss written before the op escapes the handler before R5 runs
    p = prog(DEFECT_A)
    res = run_program(p.main, p.main_ty, p.main_eff, p.signature)
    assert res.loss == (1.0,) and res.terminal == Val(loss_const(0.0))
    assert res.stats.dirty_r5 == 1 and not res.stats.in_fragment


def test_defect_b_is_flagged():
    # resumed with a new parameter that the return clause reads
    p = prog(DEFECT_B)
    res = run_program(p.main, p.main_ty, p.main_eff, p.signature)
    assert res.loss == (-1.5,) and res.terminal == Val(loss_const(1.0))
    assert res.stats.reparam_r5 == 1 and res.stats.dirty_r5 == 0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 25))
def test_machine_agrees_with_reference_steps(seed, size):
    e, ty, eps = gen_term(seed, size)
    gamma = zero_cont(eps, ty, DEFAULT_SIG)
    res, tr = check_properties(e, ty, gamma, eps, DEFAULT_SIG)
    r, w, n = small_step_eval(gamma, eps, e, DEFAULT_SIG)
    assert L.close(res.loss, r, 1e-12) and res.terminal == w and res.stats.steps == n
    total = L.zero(1)
    for _, ri, _ in tr:
        total = L.add(total, ri)
    assert L.close(total, res.loss, 1e-9)


def test_lamcont_from_user_then(ndet_sig):
    e = expr("(1.0) |>^{} (\\^{} y : loss. y * 3.0)", ndet_sig)
    o = step(g0(LOSS), EMPTY, e, ndet_sig)
    assert o.rule == "R7" and isinstance(o.next, GLocal) and not isinstance(o.next.cont, LamCont)
