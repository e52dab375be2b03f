import pytest
from hypothesis import given, settings, strategies as st

from conftest import eff, expr, prog
from selc.conformance import DEFAULT_SIG, Prober, ProbeSet, tree_equal
from selc.denotational import (
    FALSE_SV, TRUE_SV, UNIT_SV, ConstV, Denotation, FnV, Leaf, Node, NotWellFoundedError, TupleV,
    deep, denote_expr, denote_handler, denote_loss_fn, denote_value, er, render_sem, sel_bind, sel_unit, tree_extend,
    tree_map, w_action, zero_gamma,
)
from selc.gen import gen_term
from selc.operational import run_program
from selc.pretty import render_value
from selc.stdlib import fixture_path, fixture_suite, load_program
from selc.syntax import CHAR, EMPTY, LOSS, is_value

G0 = zero_gamma(1)


def lv(x):
    return ConstV((float(x),), LOSS)


def node(children, out=UNIT_SV):
    return Node("ndet", "decide", 1, out, children)


def eq(t1, t2, sig, depth=3):
    return tree_equal(t1, t2, Prober(sig, ProbeSet(depth=depth)))


def test_tree_extend_leaf_and_node(ndet_sig):
    f = lambda x: Leaf(("mapped", x))
    assert tree_extend(f, Leaf(1)) == f(1)
    t = tree_extend(f, node(lambda a: Leaf(a)))
    assert isinstance(t, Node) and t.child(TRUE_SV) == Leaf(("mapped", TRUE_SV))


def test_w_action_laws(ndet_sig):
    v = UNIT_SV
    u = Leaf(((3.0,), v))
    assert w_action((0.0,), u) == u
    assert w_action((2.0,), u) == Leaf(((5.0,), v))
    assert w_action((1.0,), w_action((2.0,), Leaf(((0.5,), v)))) == Leaf(((3.5,), v))
    t = node(lambda a: Leaf(((1.0,), a)))
    shifted = w_action((2.0,), t)
    for a in (TRUE_SV, FALSE_SV):
        assert shifted.child(a) == w_action((2.0,), t.child(a))


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_w_action_composes(r, s, x):
    u = Leaf(((x,), UNIT_SV))
    a = w_action((r,), w_action((s,), u)).value[0][0]
    b = w_action((r + s,), u).value[0][0]
    assert abs(a - b) <= 1e-9 * max(1.0, abs(r) + abs(s) + abs(x))


def test_sel_unit_ignores_gamma():
    c = sel_unit(ConstV("a", CHAR))
    assert c.run(G0) == Leaf(((0.0,), ConstV("a", CHAR)))
    assert c.run(lambda a: Leaf((7.0,))) == c.run(G0)


def test_er_examples(ndet_sig):
    gamma = lambda a: Leaf((4.0,))
    assert er(sel_unit(UNIT_SV), gamma) == gamma(UNIT_SV)
    F = denote_expr({}, expr("loss(2.0)", ndet_sig), EMPTY, ndet_sig)
    assert er(F, G0) == Leaf((2.0,))
    t = er(denote_expr({}, expr("decide(())", ndet_sig, eff("ndet")), eff("ndet"), ndet_sig), G0)
    assert isinstance(t, Node) and t.child(TRUE_SV) == Leaf((0.0,))


def test_loss_sequence():
    p = prog("main ! {} = loss(1.0); loss(2.0)")
    t = denote_expr({}, p.main, EMPTY, p.signature).run(G0)
    assert t == Leaf(((3.0,), UNIT_SV))


# Monad laws on computations of the ndet signature, compared at probes.

def comps(sig):
    d = Denotation(sig)
    srcs = ["1.0", "loss(2.0); 3.0", "b <- decide(()); if b then 1.0 else (loss(1.0); 2.0)",
            "b <- decide(()); loss(if b then 0.5 else 1.5); 0.0"]
    return [d.expr({}, expr(s, sig, eff("ndet")), eff("ndet")) for s in srcs]


def fns(sig):
    d = Denotation(sig)
    bodies = ["x + 1.0", "loss(x); x", "b <- decide(()); if b then x else (loss(1.0); x * 2.0)"]
    out = []
    for b in bodies:
        lam = expr(f"\\^{{ndet}} x : loss. {b}", sig, eff("ndet"))
        out.append(lambda a, lam=lam: d.expr({"x": a}, lam.body, eff("ndet")))
    return out


GAMMAS = [G0, lambda a: Leaf((a.value[0],)),
          lambda a: Node("ndet", "decide", 1, UNIT_SV, lambda b: Leaf((1.0 if b == TRUE_SV else -a.value[0],)))]


def test_left_unit(ndet_sig):
    for f in fns(ndet_sig):
        for x in (lv(0), lv(2.5)):
            for g in GAMMAS:
                assert eq(sel_bind(sel_unit(x), f).run(g), f(x).run(g), ndet_sig)


def test_right_unit(ndet_sig):
    for F in comps(ndet_sig):
        for g in GAMMAS:
            assert eq(sel_bind(F, sel_unit).run(g), F.run(g), ndet_sig)


def test_associativity(ndet_sig):
    fs = fns(ndet_sig)
    for F in comps(ndet_sig):
        for f in fs:
            for h in fs:
                for g in GAMMAS:
                    lhs = sel_bind(sel_bind(F, f), h).run(g)
                    rhs = sel_bind(F, lambda x: sel_bind(f(x), h)).run(g)
                    assert eq(lhs, rhs, ndet_sig)


def test_denote_value_examples(ndet_sig):
    assert denote_value({}, expr("'a'", ndet_sig), ndet_sig) == ConstV("a", CHAR)
    assert denote_value({}, expr("(2.0, 'b')", ndet_sig), ndet_sig) == TupleV((lv(2), ConstV("b", CHAR)))
    f = denote_value({}, expr("\\^{} x : loss. x", ndet_sig), ndet_sig)
    assert isinstance(f, FnV) and f(lv(3)).run(G0) == Leaf(((0.0,), lv(3)))


def test_denote_loss_fn_examples(ndet_sig):
    assert denote_loss_fn({}, expr("\\^{} x : loss. 0.0", ndet_sig), ndet_sig)(lv(1)) == Leaf((0.0,))
    assert denote_loss_fn({}, expr("\\^{} x : loss. x", ndet_sig), ndet_sig)(lv(5)) == Leaf((5.0,))
    # the written 9 is discarded, the returned value kept
    lam = expr("\\^{} x : loss. (loss(9.0); x)", ndet_sig)
    assert denote_loss_fn({}, lam, ndet_sig)(lv(5)) == Leaf((5.0,))


def test_op_node_shape(ndet_sig):
    t = denote_expr({}, expr("decide(())", ndet_sig, eff("ndet")), eff("ndet"), ndet_sig).run(G0)
    assert (t.label, t.op, t.index, t.out) == ("ndet", "decide", 1, UNIT_SV)
    assert t.child(TRUE_SV) == Leaf(((0.0,), TRUE_SV))
    t2 = denote_expr({}, expr("decide(())", ndet_sig, eff("ndet", "ndet")), eff("ndet", "ndet"), ndet_sig).run(G0)
    assert t2.index == 2


def test_overview_denotation():
    p = load_program(fixture_path("overview"))
    t = Denotation(p.signature).run_program(p.main, EMPTY)
    assert t == Leaf(((2.0,), ConstV("a", CHAR)))


def test_handler_on_pure_value(ndet_sig):
    h = expr("handle (handler ndet : loss => loss ! {} { decide(x, l, k) => k(true) | return(x) => x + 1.0 }) "
             "with 1.0", ndet_sig).handler
    H = denote_handler({}, h, ndet_sig)
    assert H(UNIT_SV, sel_unit(lv(1))).run(G0) == Leaf(((0.0,), lv(2)))


def test_handler_forwards_other_labels(sig3):
    src = ("handle (handler num : loss => loss ! {ndet} { choose(x, l, k) => k(x) | return(x) => x }) with "
           "b <- decide(()); if b then 1.0 else 2.0")
    e = expr(src, sig3, eff("ndet"))
    t = denote_expr({}, e, eff("ndet"), sig3).run(G0)
    assert isinstance(t, Node) and t.op == "decide"
    assert t.child(TRUE_SV) == Leaf(((0.0,), lv(1))) and t.child(FALSE_SV) == Leaf(((0.0,), lv(2)))


def test_refuses_non_wellfounded():
    p = load_program(fixture_path("cow"))
    with pytest.raises(NotWellFoundedError):
        Denotation(p.signature)


@pytest.mark.parametrize("fx", [f for f in fixture_suite() if f.wellfounded and f.name != "sgd"],
                         ids=lambda f: f.name)
def test_fixtures_agree_with_operational(fx):
    p = load_program(fx.path)
    res = run_program(p.main, p.main_ty, p.main_eff, p.signature)
    t = deep(Denotation(p.signature).run_program, p.main, p.main_eff)
    assert isinstance(t, Leaf)
    assert t.value[0] == res.loss
    assert render_sem(t.value[1]) == render_value(res.terminal.value)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 8))
def test_value_denotation_is_a_leaf(seed, size):
    e, ty, eps = gen_term(seed, size)
    if not is_value(e):
        return
    d = Denotation(DEFAULT_SIG)
    for g in (G0, lambda a: Leaf((1.0,))):
        t = d.expr({}, e, eps).run(g)
        assert isinstance(t, Leaf) and t.value[0] == (0.0,)
        assert eq(t, Leaf(((0.0,), d.value({}, e))), DEFAULT_SIG)


def test_tree_map_is_functorial():
    t = node(lambda a: Leaf(1.0))
    m = tree_map(lambda x: x * 2, tree_map(lambda x: x + 1, t))
    assert m.child(TRUE_SV) == Leaf(4.0)
