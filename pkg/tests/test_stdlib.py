import math
import shutil
import time

import pytest

from selc.conformance import check_eval_soundness
from selc.operational import FuelExhausted, Val, zero_cont
from selc.pretty import render_value
from selc.stdlib import (
    PACKAGE_FIXTURES, SGD_DATA, argmax_comparisons, fd_gradient, fixture_path, fixture_suite, load_program,
    load_source, primitives, run_fixture, sgd_oracle, sgd_updates,
)

SUITE = fixture_suite()
TERMINATING = [fx for fx in SUITE if not fx.diverges]


def test_suite_lists_every_fixture():
    names = {fx.name for fx in SUITE}
    assert {"overview", "collect", "collect_not", "password", "minimax", "nash", "sgd", "tunelr",
            "tunelr_tie", "cow"} <= names
    for fx in SUITE:
        assert fx.path.exists() and fx.provenance


@pytest.mark.parametrize("fx", TERMINATING, ids=lambda fx: fx.name)
def test_fixture_expectations(fx):
    res = run_fixture(fx)
    assert isinstance(res.terminal, Val)
    if fx.expected_value is not None:
        assert render_value(res.terminal.value) == fx.expected_value
    if fx.expected_loss is not None:
        assert all(math.isclose(a, b, abs_tol=1e-9) for a, b in zip(res.loss, fx.expected_loss))


def test_cow_diverges():
    cow = next(fx for fx in SUITE if fx.name == "cow")
    assert not cow.wellfounded
    with pytest.raises(FuelExhausted):
        run_fixture(cow)


def test_fd_gradient_examples():
    (g,) = fd_gradient("x <- sum[{}](q); x * x", [3.0])
    assert abs(g - 6.0) < 1e-6
    assert fd_gradient("4.0", [1.0, 2.0]) == [0.0, 0.0]
    g = fd_gradient("xy <- two[{}](q); xy.0 + 2.0 * xy.1", [0.5, -1.0])
    assert all(abs(a - b) < 1e-6 for a, b in zip(g, [1.0, 2.0]))


def test_password_rewards_scanned_in_order():
    p = load_program(fixture_path("password"))
    cmp = argmax_comparisons(p)
    assert cmp == [(-math.inf, 12.0), (12.0, 8.0), (12.0, 4.0)]
    res = run_fixture("password")
    assert render_value(res.terminal.value) == '"password is abc"'


def test_sgd_matches_host_oracle_per_update():
    start = time.monotonic()
    updates, res = sgd_updates()
    assert time.monotonic() - start < 10.0
    want = sgd_oracle()
    assert len(updates) == len(want) == 200 * len(SGD_DATA) + 1
    for got, exp in zip(updates, want):
        assert all(abs(a - b) <= 1e-6 for a, b in zip(got, exp))
    w, b = updates[-1]
    assert abs(w - 2.0) < 0.1 and abs(b - 1.0) < 0.1


def test_tunelr_picks_smaller_error_and_first_on_tie():
    assert render_value(run_fixture("tunelr").terminal.value) == "0.1"
    assert render_value(run_fixture("tunelr_tie").terminal.value) == "0.5"


def test_fixture_dir_override(tmp_path, monkeypatch):
    shutil.copy(PACKAGE_FIXTURES / "prelude.selc", tmp_path / "prelude.selc")
    (tmp_path / "overview.selc").write_text("main ! {} = loss(5.0); 'z'\n")
    monkeypatch.setenv("SELC_FIXTURES", str(tmp_path))
    res = run_fixture("overview")
    assert res.loss == (5.0,) and render_value(res.terminal.value) == "'z'"
    # fixtures absent from the override fall back to the packaged set
    assert fixture_path("minimax") == PACKAGE_FIXTURES / "minimax.selc"


def test_prelude_and_primitives():
    p = load_source("main ! {} = fd_gradient[{}](\\^{} q : list[loss]. 1.0, list[loss](0.0), 0.001)")
    assert p.main_ty is not None
    assert {"add", "mul", "leq", "div"} <= set(primitives())


def test_sgd_denotation_agrees():
    p = load_program(fixture_path("sgd"))
    gamma = zero_cont(p.main_eff, p.main_ty, p.signature)
    check_eval_soundness(p.main, gamma, p.main_eff, p.signature)
