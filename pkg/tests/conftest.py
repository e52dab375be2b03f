import sys

import pytest

from selc.conformance import DEFAULT_SIG
from selc.parser import parse_expr, parse_program
from selc.stdlib import load_source
from selc.syntax import EMPTY, Effect

NDET_SRC = "effect ndet { decide : () -> bool }\nmain ! {} = ()\n"


@pytest.fixture(scope="session")
def ndet_sig():
    return parse_program(NDET_SRC).signature


@pytest.fixture(scope="session")
def sig3():
    return DEFAULT_SIG


def expr(text, sig, amb=EMPTY, env=None):
    return parse_expr(text, sig, amb, env)


def prog(text, prelude=False):
    return load_source(text, with_prelude=prelude)


def eff(*labels):
    return Effect.of(*labels)


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acc.RESULTS):
        status, text = acc.RESULTS[n]
        terminalreporter.write_line(f"{status} {n:2d} {text}")
