from hypothesis import given, settings, strategies as st

from conftest import eff, expr
from selc.gen import gen_term
from selc.syntax import (
    EMPTY, LOSS, UNIT, UNIT_V, Effect, ExtendCont, FLoss, InRegularFrame, InSpecialFrame, IsRedex,
    IsStuck, IsValue, Lam, Loss, OpCall, SHandle, SThen, Var, ZeroCont, analyze, char, cont_from_lam, direct_child,
    handled_ops, loss_const, plug, split, subst,
)


def test_effect_multiset_union_and_order():
    a = Effect.of("ndet", "ndet", "num")
    b = Effect.of("ndet")
    assert a.count("ndet") == 2 and a.count("ask") == 0
    assert (a + b).count("ndet") == 3
    assert b.sub(a) and not a.sub(b)
    assert EMPTY.sub(b)
    assert Effect({"x": 0}) == EMPTY


def test_subst_examples():
    x = Var("x")
    assert subst(x, char("a"), "x") == char("a")
    lam = Lam(EMPTY, "x", LOSS, x)
    assert subst(lam, loss_const(3.0), "x") == lam
    assert subst(Loss(x), loss_const(2.0), "x") == Loss(loss_const(2.0))


def test_subst_avoids_capture(ndet_sig):
    # the substituted value mentions y free; the binder is renamed
    e = Lam(EMPTY, "y", LOSS, Var("x"))
    out = subst(e, Var("y"), "x")
    assert isinstance(out, Lam) and out.var != "y" and out.body == Var("y")


def test_analyze_examples(ndet_sig):
    assert analyze(char("a")) == IsValue(char("a"))
    stuck = analyze(expr("decide(())", ndet_sig, eff("ndet")))
    assert stuck == IsStuck((), "decide", UNIT_V)
    assert analyze(expr("(\\^{} x : loss. x) 2.0", ndet_sig)) == IsRedex("R3")


def test_analyze_frames(ndet_sig):
    e = expr("loss(1.0 + 2.0)", ndet_sig)
    form = analyze(e)
    assert isinstance(form, InRegularFrame) and isinstance(form.frame, FLoss)
    t = expr("(loss(1.0)) |>^{} (\\^{} u : (). 0.0)", ndet_sig)
    form = analyze(t)
    assert isinstance(form, InSpecialFrame) and isinstance(form.frame, SThen)


def test_handled_ops_examples(ndet_sig):
    src = "handle (handler ndet : bool => bool ! {} { decide(x, l, k) => k(true) | return(x) => x }) with decide(())"
    h = expr(src, ndet_sig)
    frames, _ = _frames(h)
    assert handled_ops(()) == frozenset()
    assert handled_ops(frames[:1]) == {"decide"}
    then = analyze(expr("(loss(1.0)) |>^{} (\\^{} u : (). 0.0)", ndet_sig)).frame
    assert handled_ops((then,)) == frozenset()


def _frames(e):
    out = []
    while True:
        s = split(e)
        if s[0] != "frame":
            return out, e
        out.append(s[1])
        e = s[2]


def test_plug_examples(ndet_sig):
    e = loss_const(2.0)
    assert plug((), e) == e
    assert plug((FLoss(),), e) == Loss(e)
    h = expr("handle (handler ndet : bool => bool ! {} { decide(x, l, k) => k(true) | return(x) => x }) with true",
             ndet_sig)
    frame = SHandle(h.handler, h.param)
    call = expr("decide(())", ndet_sig, eff("ndet"))
    assert plug((frame,), call).body == call


def test_handled_ops_ignores_regular_frames(ndet_sig):
    h = expr("handle (handler ndet : bool => bool ! {} { decide(x, l, k) => k(true) | return(x) => x }) with true",
             ndet_sig)
    frame = SHandle(h.handler, h.param)
    assert handled_ops((FLoss(), frame)) == handled_ops((frame,))


def test_loss_cont_round_trip():
    g = ExtendCont(EMPTY, "x", LOSS, Loss(Var("x")), ZeroCont(EMPTY, UNIT))
    assert cont_from_lam(g.to_lam()) == g
    z = ZeroCont(eff("ndet"), LOSS, 2)
    assert cont_from_lam(z.to_lam()) == z


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 25))
def test_analysis_is_unique_and_replugs(seed, size):
    e, _, _ = gen_term(seed, size)
    form = analyze(e)
    assert isinstance(form, (IsValue, IsStuck, IsRedex, InRegularFrame, InSpecialFrame))
    if isinstance(form, (InRegularFrame, InSpecialFrame)):
        assert plug((form.frame,), form.expr) == e
        assert direct_child(e) == (form.frame, form.expr)
    if isinstance(form, IsStuck):
        assert plug(form.K, OpCall(form.op, form.arg)) == e
