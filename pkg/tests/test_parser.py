import pytest
from hypothesis import given, settings, strategies as st

from conftest import eff, expr, prog
from selc.conformance import DEFAULT_SIG, program_text
from selc.gen import gen_term
from selc.operational import run_program
from selc.parser import ParseError, parse_expr, parse_program
from selc.pretty import print_expr, render_value
from selc.stdlib import fixture_path, load_program
from selc.syntax import (
    EMPTY, LOSS, App, Cases, Const, GLocal, Lam, Loss, OpCall, Reset, Tuple, Var, ZeroCont, loss_const,
)
from selc.typecheck import TypeCheckError


def test_loss_literal(ndet_sig):
    assert expr("loss(2.0)", ndet_sig) == Loss(Const((2.0,), LOSS))


def test_bind_sugar(ndet_sig):
    e = expr("x <- decide(()); x", ndet_sig, eff("ndet"))
    assert isinstance(e, App) and isinstance(e.fn, Lam)
    assert e.fn.var == "x" and e.fn.body == Var("x")
    assert e.arg == OpCall("decide", Tuple(()))


def test_if_is_cases(ndet_sig):
    e = expr("if true then 1.0 else 2.0", ndet_sig)
    assert isinstance(e, Cases)


def test_if_branches_must_agree(ndet_sig):
    with pytest.raises(TypeCheckError):
        prog("main ! {} = if true then 1.0 else 'a'")


def test_local_and_lreset(ndet_sig):
    e = expr("lreset (loss(1.0))", ndet_sig)
    assert isinstance(e, Reset) and isinstance(e.body, GLocal)
    assert isinstance(e.body.cont, ZeroCont)
    assert isinstance(expr("local (loss(1.0))", ndet_sig), GLocal)


def test_overview_program():
    p = load_program(fixture_path("overview"))
    res = run_program(p.main, p.main_ty, p.main_eff, p.signature)
    assert res.loss == (2.0,)
    assert render_value(res.terminal.value) == "'a'"


def test_vector_losses_and_comments():
    p = prog("-- a comment\nloss_dim 2\nmain ! {} = loss(<1.0, 2.0>); <3.0, 4.0> -- trailing\n")
    assert p.loss_dim == 2
    res = run_program(p.main, p.main_ty, p.main_eff, p.signature)
    assert res.loss == (1.0, 2.0)
    assert res.terminal.value == Const((3.0, 4.0), LOSS)


@pytest.mark.parametrize("text", [
    "main ! {} = 1.0 +",
    "main ! {} = (1.0",
    "effect e { }\nmain ! {} = ()",
    "main ! {} = \"unterminated",
    "def f = 1.0",
])
def test_parse_errors_have_positions(text):
    with pytest.raises(ParseError) as info:
        parse_program(text)
    assert info.value.line >= 1 and info.value.column >= 1 and info.value.message


def test_print_examples(ndet_sig):
    assert print_expr(Loss(loss_const(2.0))) == "loss(2.0)"
    printed = print_expr(ZeroCont(EMPTY, LOSS).to_lam())
    assert printed.startswith("\\^{}") and printed.endswith("0.0")


@pytest.mark.parametrize("name", ["overview", "collect", "password", "minimax", "nash", "sgd", "tunelr"])
def test_fixture_print_round_trip(name):
    p = load_program(fixture_path(name))
    printed = print_expr(p.main)
    again = parse_expr(printed, p.signature, p.main_eff)
    assert again == p.main
    assert print_expr(again) == printed


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 25))
def test_generated_terms_round_trip(seed, size):
    e, ty, eps = gen_term(seed, size)
    assert parse_expr(print_expr(e), DEFAULT_SIG, eps) == e
    p = parse_program(program_text(e, ty, eps, DEFAULT_SIG))
    assert p.main == e and p.main_ty == ty and p.main_eff == eps
