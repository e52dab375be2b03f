"""Example programs, the helper prelude and host-side oracles for them."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

from .operational import DEFAULT_FUEL, EvalResult, Val, run_program, trace, zero_cont
from .parser import SourceProgram, parse_program
from .prims import Prim, prim_table
from .syntax import Cons, Const, Expr, PrimApp, Tuple, split

PACKAGE_FIXTURES = Path(__file__).parent / "fixtures"

__all__ = [
    "Fixture",
    "PrimTable",
    "argmax_comparisons",
    "fd_gradient",
    "fixture_dir",
    "fixture_path",
    "fixture_suite",
    "load_program",
    "load_source",
    "prelude_text",
    "primitives",
    "run_fixture",
    "sgd_oracle",
    "sgd_updates",
]

PrimTable = dict[str, Prim]


def fixture_dir() -> Path:
    """The fixture directory; SELC_FIXTURES overrides the packaged one."""
    override = os.environ.get("SELC_FIXTURES")
    return Path(override) if override else PACKAGE_FIXTURES


def fixture_path(name: str) -> Path:
    p = fixture_dir() / f"{name}.selc"
    if not p.exists() and (PACKAGE_FIXTURES / f"{name}.selc").exists():
        p = PACKAGE_FIXTURES / f"{name}.selc"
    return p


def prelude_text() -> str:
    p = fixture_dir() / "prelude.selc"
    if not p.exists():
        p = PACKAGE_FIXTURES / "prelude.selc"
    return p.read_text(encoding="utf-8")


def load_source(text: str, with_prelude: bool = True) -> SourceProgram:
    return parse_program(text, prelude_text() if with_prelude else None)


def load_program(path: str | Path, with_prelude: bool = True) -> SourceProgram:
    return load_source(Path(path).read_text(encoding="utf-8"), with_prelude)


def primitives(loss_dim: int = 1) -> PrimTable:
    return prim_table(loss_dim)


# ---------------------------------------------------------------------------
# Fixture suite


@dataclass(frozen=True)
class Fixture:
    name: str
    path: Path
    expected_loss: tuple | None
    expected_value: str | None
    provenance: str
    meaning: str = ""
    wellfounded: bool = True
    diverges: bool = False
    fuel: int = DEFAULT_FUEL


def fixture_suite() -> list[Fixture]:
    manifest = fixture_dir() / "manifest.json"
    if not manifest.exists():
        manifest = PACKAGE_FIXTURES / "manifest.json"
    data = json.loads(manifest.read_text(encoding="utf-8"))
    out = []
    for entry in data["fixtures"]:
        loss = entry.get("loss")
        out.append(Fixture(
            name=entry["name"],
            path=fixture_path(entry["name"]),
            expected_loss=tuple(map(float, loss)) if loss is not None else None,
            expected_value=entry.get("value"),
            provenance=entry["provenance"],
            meaning=entry.get("meaning", ""),
            wellfounded=entry.get("wellfounded", True),
            diverges=entry.get("diverges", False),
            fuel=int(entry.get("fuel", DEFAULT_FUEL)),
        ))
    return out


def run_fixture(fx: Fixture | str, fuel: int | None = None, observe=None) -> EvalResult:
    path = fx.path if isinstance(fx, Fixture) else fixture_path(fx)
    prog = load_program(path)
    if fuel is None:
        fuel = fx.fuel if isinstance(fx, Fixture) else DEFAULT_FUEL
    return run_program(prog.main, prog.main_ty, prog.main_eff, prog.signature, fuel, observe)


# ---------------------------------------------------------------------------
# Library functions driven from the host


def _loss_list(xs) -> str:
    return "list[loss](" + ", ".join(repr(float(x)) for x in xs) + ")"


def fd_gradient(body: str, p, h: float = 1e-5) -> list[float]:
    """Run the prelude's fd_gradient on `\\q : list[loss]. body` at p."""
    src = (f"main ! {{}} = fd_gradient[{{}}](\\^{{}} q : list[loss]. {body}, "
           f"{_loss_list(p)}, {float(h)!r})")
    prog = load_source(src)
    res = run_program(prog.main, prog.main_ty, prog.main_eff, prog.signature)
    return _floats(res.terminal.value)


def _floats(v: Expr) -> list[float]:
    out = []
    while isinstance(v, Cons):
        out.append(v.head.value[0])
        v = v.tail
    return out


def _focus(e: Expr) -> Expr:
    cur = e
    while True:
        s = split(cur)
        if s[0] != "frame":
            return cur
        cur = s[2]


def argmax_comparisons(prog: SourceProgram) -> list[tuple[float, float]]:
    """Every `leq` on two losses contracted while running prog, in order."""
    gamma = zero_cont(prog.main_eff, prog.main_ty, prog.signature)
    prev = prog.main
    out = []
    for rule, _, nxt in trace(gamma, prog.main_eff, prev, prog.signature):
        if rule.endswith("R1"):
            red = _focus(prev)
            if (isinstance(red, PrimApp) and red.prim == "leq" and isinstance(red.arg, Tuple)
                    and all(isinstance(x, Const) for x in red.arg.items)):
                a, b = (x.value[0] for x in red.arg.items)
                out.append((a, b))
        prev = nxt
    return out


SGD_DATA = [(i * 0.25, 2.0 * (i * 0.25) + 1.0) for i in range(9)]


def sgd_oracle(epochs: int = 200, lr: float = 0.01, h: float = 1e-5,
               data=SGD_DATA) -> list[list[float]]:
    """Plain-loop SGD with central differences; returns every parameter
    vector seen, starting from [0, 0].  Points are visited last first, as
    the fixture's right fold does."""

    def sq(p, x, t):
        y = p[0] * x + p[1]
        return (t - y) * (t - y)

    p = [0.0, 0.0]
    seen = [p]
    for _ in range(epochs):
        for x, t in reversed(data):
            g = []
            for i in range(len(p)):
                up = [w + h if j == i else w for j, w in enumerate(p)]
                dn = [w - h if j == i else w for j, w in enumerate(p)]
                g.append((sq(up, x, t) - sq(dn, x, t)) / (2.0 * h))
            p = [w - lr * d for w, d in zip(p, g)]
            seen.append(p)
    return seen


def sgd_updates(fx: Fixture | str = "sgd") -> tuple[list[list[float]], EvalResult]:
    """Parameters handed to each `optimize` call, and the final result."""
    args: list[list[float]] = []

    def observe(event: str, info: dict) -> None:
        if event == "R5" and info["op"] == "optimize":
            args.append(_floats(info["arg"]))

    res = run_fixture(fx, observe=observe)
    if isinstance(res.terminal, Val):
        args.append(_floats(res.terminal.value))
    return args, res

