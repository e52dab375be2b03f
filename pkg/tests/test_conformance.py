import json

import pytest
from hypothesis import given, settings, strategies as st

from conftest import prog
from test_operational import DEFECT_A, DEFECT_B
from selc.conformance import (
    DEFAULT_SIG, FuzzReport, Mismatch, MismatchError, ProbeSet, check_eval_soundness,
    check_giant_adequacy, check_step_soundness, fuzz, fuzz_parallel, make_case, program_text, replay, save_failures,
    tree_equal,
)
from selc.denotational import TRUE_SV, UNIT_SV, Denotation, Leaf, Node
from selc.gen import gen_term, shrink, term_size
from selc.operational import run_program, zero_cont
from selc.parser import parse_program
from selc.stdlib import fixture_path, load_program
from selc.syntax import BOOL, LOSS
import selc.typecheck as tc


def leaf(x):
    return Leaf(((x,), UNIT_SV))


def tree_of(e, eps, ty, sig=DEFAULT_SIG):
    den = Denotation(sig)
    g = den.loss_fn({}, zero_cont(eps, ty, sig).to_lam())
    return den.expr({}, e, eps).run(g)


def test_leaf_tolerance():
    assert tree_equal(leaf(2.0), leaf(2.0 + 1e-12))
    assert not tree_equal(leaf(2.0), leaf(2.0 + 1e-6))
    assert not tree_equal(leaf(2.0), Leaf(((2.0,), TRUE_SV)))


def test_node_children_compared_at_probes():
    a = Node("ndet", "decide", 1, UNIT_SV, lambda b: leaf(1.0 if b == TRUE_SV else 2.0))
    b = Node("ndet", "decide", 1, UNIT_SV, lambda b: leaf(1.0 if b == TRUE_SV else 2.5))
    assert tree_equal(a, a)
    assert not tree_equal(a, b)
    assert tree_equal(a, b, depth=0)
    assert not tree_equal(a, Node("ndet", "decide", 2, UNIT_SV, a.children))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(1, 15))
def test_tree_equal_laws(s1, s2, size):
    e1, ty1, eps1 = gen_term(s1, size)
    e2, _, _ = gen_term(s2, size)
    t1 = tree_of(e1, eps1, ty1)
    assert tree_equal(t1, t1)
    if tc.checks(None, e2, ty1, eps1, DEFAULT_SIG):
        t2 = tree_of(e2, eps1, ty1)
        assert tree_equal(t1, t2) == tree_equal(t2, t1)
        if tree_equal(t1, t2, tol=1e-9):
            assert tree_equal(t1, t2, tol=1e-3)


def test_probe_set_parse_and_values():
    p = ProbeSet.parse("4,2,1")
    assert (p.seed, p.N, p.L) == (4, 2, 1)
    with pytest.raises(ValueError):
        ProbeSet.parse("4,2")
    assert p.values(LOSS) == p.values(LOSS)
    assert len(p.values(BOOL)) == 2


def _check_all(p, **kw):
    gamma = zero_cont(p.main_eff, p.main_ty, p.signature)
    n = check_step_soundness(p.main, gamma, p.main_eff, p.signature, **kw)
    check_eval_soundness(p.main, gamma, p.main_eff, p.signature, **kw)
    check_giant_adequacy(p.main, gamma, p.main_eff, p.signature, **kw)
    return n


def test_single_loss_step():
    p = prog("main ! {} = loss(2.0); 'x'")
    assert _check_all(p) >= 2


def test_overview_trace_is_sound():
    p = load_program(fixture_path("overview"))
    assert _check_all(p) == 58


def test_password_is_sound():
    p = load_program(fixture_path("password"))
    gamma = zero_cont(p.main_eff, p.main_ty, p.signature)
    check_eval_soundness(p.main, gamma, p.main_eff, p.signature)


def test_unhandled_decide_is_stuck_and_sound():
    src = "effect ndet { decide : () -> bool }\nmain ! {ndet} = loss(1.0); b <- decide(()); if b then loss(2.0); 0.0 else 1.0\n"
    p = prog(src)
    res = run_program(p.main, p.main_ty, p.main_eff, p.signature)
    assert res.loss == (1.0,) and res.terminal.op == "decide"
    _check_all(p)


def test_giant_depth_two():
    src = ("effect ndet { decide : () -> bool }\n"
           "main ! {ndet} = a <- decide(()); b <- decide(()); loss(if a then 1.0 else 2.0); if b then 'x' else 'y'\n")
    p = prog(src)
    gamma = zero_cont(p.main_eff, p.main_ty, p.signature)
    check_giant_adequacy(p.main, gamma, p.main_eff, p.signature, depth=2)


@pytest.mark.parametrize("src", [DEFECT_A, DEFECT_B], ids=["dirty", "reparam"])
def test_checkers_detect_pinned_defects(src):
    p = prog(src)
    gamma = zero_cont(p.main_eff, p.main_ty, p.signature)
    checks = [check_eval_soundness, check_giant_adequacy]
    if src is DEFECT_B:
        checks.append(check_step_soundness)
    for check in checks:
        with pytest.raises(MismatchError) as info:
            check(p.main, gamma, p.main_eff, p.signature)
        assert isinstance(info.value.mismatch, Mismatch)


def test_gen_term_small_and_typed():
    e, ty, eps = gen_term(0, 1)
    assert term_size(e) == 1
    for seed in range(300):
        e, ty, eps = gen_term(seed, 25)
        assert term_size(e) <= 25
        assert tc.checks(None, e, ty, eps, DEFAULT_SIG)
    assert gen_term(7, 20) == gen_term(7, 20)


def test_shrink_keeps_property_and_type():
    start = None
    for seed in range(500):
        e, ty, eps = gen_term(seed, 25)
        if term_size(e) > 10 and "loss(" in program_text(e, ty, eps, DEFAULT_SIG):
            start = (e, ty, eps)
            break
    assert start is not None
    e, ty, eps = start

    def has_loss(c):
        return "loss(" in program_text(c, ty, eps, DEFAULT_SIG)

    small = shrink(e, ty, eps, has_loss)
    assert has_loss(small) and term_size(small) < term_size(e)
    assert tc.checks(None, small, ty, eps, DEFAULT_SIG)


def test_program_text_reparses():
    for seed in range(100):
        case = make_case(seed)
        text = program_text(case.expr, case.ty, case.eps, DEFAULT_SIG, case.gamma)
        parse_program(text)


def test_save_and_replay_round_trip(tmp_path):
    cases = [make_case(3), make_case(11)]
    report = FuzzReport(failures=[(c, Mismatch("p", "step", seed=c.seed)) for c in cases])
    manifest = save_failures(report, tmp_path, shrink_failures=False)
    data = json.loads(manifest.read_text())
    assert [f["seed"] for f in data["failures"]] == [3, 11]
    for f in data["failures"]:
        parse_program((tmp_path / f["file"]).read_text())
    again = replay(manifest)
    assert again.accepted + again.rejected_dirty + again.rejected_reparam == 2
    assert again.ok


def test_small_campaign_all_stages():
    report = fuzz(150, seed=123, stages=("props", "step", "eval", "giant"), depth=2)
    assert report.ok, report.failures[:1]
    assert report.accepted == 150 and report.steps_checked > 0


def test_parallel_matches_sequential():
    seq = fuzz(60, seed=5)
    par = fuzz_parallel(60, jobs=2, seed=5)
    assert par.ok and seq.ok
    assert par.accepted >= 60
