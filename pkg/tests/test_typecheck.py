import warnings

import pytest
from hypothesis import given, settings, strategies as st

from conftest import eff, expr, prog
from selc.conformance import DEFAULT_SIG
from selc.gen import gen_term
from selc.parser import parse_program
from selc.stdlib import fixture_path, load_program
from selc.syntax import BOOL, CHAR, EMPTY, LOSS, UNIT, Fn, OpSig, Signature
from selc import typecheck as tc


def hmin_src(extra=""):
    return ("effect ndet { decide : () -> bool }\n"
            "def hmin = handler ndet : char => char ! {} {\n"
            "    decide(x, l, k) => y <- l(true); z <- l(false); if y <= z then k(true) else k(false)\n"
            f"  {extra}| return(x) => x\n}}\n")


def test_infer_loss_op_and_app(ndet_sig):
    assert tc.infer(None, expr("loss(2.0)", ndet_sig), ndet_sig) == (UNIT, EMPTY)
    ty, e = tc.infer(None, expr("decide(())", ndet_sig, eff("ndet")), ndet_sig)
    assert ty == BOOL and "ndet" in e.labels()
    with pytest.raises(tc.TypeCheckError) as info:
        parse_program("main ! {} = (\\^{} x : loss. x) true")
    assert info.value.rule == "app"


def test_values_check_at_any_effect(ndet_sig):
    v = expr("1.0", ndet_sig)
    for e in (EMPTY, eff("ndet"), eff("ndet", "ndet")):
        assert tc.checks(None, v, LOSS, e, ndet_sig)


def test_op_requires_label(ndet_sig):
    call = expr("decide(())", ndet_sig, eff("ndet"))
    assert tc.checks(None, call, BOOL, eff("ndet"), ndet_sig)
    assert not tc.checks(None, call, BOOL, EMPTY, ndet_sig)


def test_no_subeffecting_at_application(ndet_sig):
    f = expr("(\\^{} x : loss. x) 1.0", ndet_sig)
    assert tc.checks(None, f, LOSS, EMPTY, ndet_sig)
    assert not tc.checks(None, f, LOSS, eff("ndet"), ndet_sig)


def test_then_allows_smaller_lambda_effect(ndet_sig):
    # the result is the loss of the left side plus the lambda's value
    e = expr("(decide(())) |>^{ndet} (\\^{} b : bool. 1.0)", ndet_sig, eff("ndet"))
    assert tc.checks(None, e, LOSS, eff("ndet"), ndet_sig)


def test_handler_type():
    p = prog(hmin_src() + "main ! {} = handle hmin with 'a'\n")
    ht = tc.check_handler(None, p.main.handler, p.signature)
    assert (ht.param_ty, ht.body_ty, ht.result_ty) == (UNIT, CHAR, CHAR)
    assert ht.body_eff == eff("ndet") and ht.result_eff == EMPTY and ht.label == "ndet"


def test_missing_and_extra_clauses():
    two = "effect ab { a : () -> (), b : () -> () }\n"
    with pytest.raises(tc.MissingClause):
        prog(two + "main ! {} = handle (handler ab : () => () ! {} { a(x, l, k) => k(()) | return(x) => x }) with ()")
    with pytest.raises(tc.ExtraClause):
        prog("effect ab { a : () -> () }\neffect cd { c : () -> () }\nmain ! {} = handle (handler ab : () => () ! {} {"
             " a(x, l, k) => k(()) | c(x, l, k) => k(()) | return(x) => x }) with ()")


def test_return_clause_of_wrong_type():
    with pytest.raises(tc.TypeCheckError) as info:
        prog("effect ndet { decide : () -> bool }\n"
             "main ! {} = handle (handler ndet : char => char ! {} {"
             " decide(x, l, k) => k(true) | return(x) => 1.0 }) with 'a'")
    assert isinstance(info.value, (tc.ClauseType, tc.TypeCheckError))


def test_wellfounded_orderings():
    ndet = Signature.build([OpSig("decide", UNIT, BOOL, "ndet")])
    assert tc.check_wellfounded(ndet).order == ("ndet",)
    moo = Signature.build([OpSig("moo", UNIT, Fn(UNIT, UNIT, eff("cow")), "cow")])
    w = tc.check_wellfounded(moo)
    assert isinstance(w, tc.CycleWitness) and w.cycle == ("cow",)
    two = Signature.build([OpSig("opA", UNIT, Fn(UNIT, UNIT, eff("l1")), "l2"), OpSig("opB", UNIT, UNIT, "l1")])
    assert tc.check_wellfounded(two).order == ("l1", "l2")


def test_cow_fixture_warns():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        p = load_program(fixture_path("cow"))
        tc.warn_if_not_wellfounded(p.signature)
    assert any("signature not well-founded" in str(w.message) for w in caught)


def test_levels_and_sizes():
    order = tc.WfOrdering(("l1", "l2"))
    assert tc.effect_level(EMPTY, order) == 0
    assert tc.type_size(LOSS) == 1
    assert tc.type_level(Fn(UNIT, UNIT, eff("l2")), order) == 2
    assert tc.type_size(Fn(LOSS, LOSS, eff("l1", "l1"))) == 1 + 1 + 1 + 2


def test_adding_label_free_op_keeps_ordering():
    base = [OpSig("opA", UNIT, Fn(UNIT, UNIT, eff("l1")), "l2"), OpSig("opB", UNIT, UNIT, "l1")]
    more = base + [OpSig("opC", LOSS, BOOL, "l3")]
    assert isinstance(tc.check_wellfounded(Signature.build(more)), tc.WfOrdering)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 25))
def test_generated_terms_check_and_infer_uniquely(seed, size):
    e, ty, eps = gen_term(seed, size)
    tc.check(None, e, ty, eps, DEFAULT_SIG)
    inferred, need = tc.infer(None, e, DEFAULT_SIG)
    assert inferred == ty and need.sub(eps)
