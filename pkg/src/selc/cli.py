"""The `selc` command: check, run, giant, oracle and fuzz."""

from __future__ import annotations

import json
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import click

from . import loss as L
from .conformance import (
    DEFAULT_PROBES,
    DEFAULT_SIG,
    DEFAULT_TOL,
    MismatchError,
    ProbeSet,
    Prober,
    check_eval_soundness,
    check_giant_adequacy,
    check_step_soundness,
    fuzz as run_fuzz,
    fuzz_parallel,
    replay as run_replay,
    save_failures,
)
from .denotational import Denotation, NotWellFoundedError, deep, render_tree, tree_json
from .operational import (
    DEFAULT_FUEL,
    Done,
    FuelExhausted,
    GiantValue,
    StuckOp,
    giant_eval,
    run_program,
    trace,
    zero_cont,
)
from .parser import ParseError, SourceProgram
from .pretty import print_effect, print_expr, print_type, render_value
from .stdlib import load_program
from .typecheck import CycleWitness, NotWellFounded, TypeCheckError, check_wellfounded

EXIT_OK, EXIT_TYPE, EXIT_FUEL, EXIT_MISMATCH, EXIT_PARSE = 0, 1, 2, 3, 4


class Exit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


@dataclass
class RunReport:
    loss: tuple
    value: str | None
    steps: int
    stuck: tuple[str, str] | None = None

    def to_json(self) -> dict:
        out = {"loss": list(self.loss), "value": self.value, "steps": self.steps}
        if self.stuck is not None:
            out["stuck"] = {"op": self.stuck[0], "arg": self.stuck[1]}
        return out

    def text(self) -> str:
        lines = [f"loss: {L.fmt(self.loss)}"]
        if self.stuck is not None:
            lines.append(f"stuck: {self.stuck[0]}({self.stuck[1]})")
        else:
            lines.append(f"value: {self.value}")
        lines.append(f"steps: {self.steps}")
        return "\n".join(lines)


def diagnostic(path: str, err: Exception) -> dict:
    """A parse or type error as `file`, `line`, `col`, `rule`, `message`."""
    if isinstance(err, ParseError):
        return {"file": path, "line": err.line, "col": err.column, "rule": "parse", "message": err.message}
    assert isinstance(err, TypeCheckError)
    line, col = err.position if err.position else (None, None)
    return {"file": path, "line": line, "col": col, "rule": err.rule, "message": err.message}


def _diag_text(d: dict) -> str:
    where = f"{d['line']}:{d['col']}:" if d["line"] is not None else ""
    return f"{d['file']}:{where} {d['rule']}: {d['message']}"


def _load(path: str, as_json: bool = False) -> SourceProgram:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NotWellFounded)
            return load_program(path)
    except (ParseError, TypeCheckError) as err:
        d = diagnostic(path, err)
        code = EXIT_PARSE if isinstance(err, ParseError) else EXIT_TYPE
        raise Exit(code, json.dumps(d) if as_json else _diag_text(d)) from err
    except OSError as err:
        raise Exit(EXIT_PARSE, f"{path}: {err.strerror}") from err


def _wf_warning(prog: SourceProgram) -> CycleWitness | None:
    res = check_wellfounded(prog.signature)
    if isinstance(res, CycleWitness):
        click.echo(f"warning: signature not well-founded: cycle {res}", err=True)
        return res
    return None


def _require_wf(prog: SourceProgram, command: str) -> None:
    if _wf_warning(prog) is not None:
        raise Exit(EXIT_TYPE, f"{command} needs a well-founded signature")


def _probes(text: str | None, depth: int | None = None) -> ProbeSet:
    if text is None:
        probes = ProbeSet()
    else:
        try:
            probes = ProbeSet.parse(text)
        except ValueError as err:
            raise click.BadParameter(str(err), param_hint="--probes") from err
    if depth is not None:
        probes = ProbeSet(probes.seed, probes.N, probes.L, probes.losses, depth)
    return probes


def _report(res) -> RunReport:
    w = res.terminal
    if isinstance(w, StuckOp):
        return RunReport(res.loss, None, res.stats.steps, (w.op, render_value(w.arg)))
    return RunReport(res.loss, render_value(w.value), res.stats.steps)


def _guard(fn):
    """Turn Exit into a diagnostic and an exit code."""

    def wrapper(*args, **kwargs):
        try:
            fn(*args, **kwargs)
        except Exit as err:
            click.echo(err.message, err=True)
            sys.exit(err.code)
        except FuelExhausted as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(EXIT_FUEL)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


fuel_option = click.option("--fuel", type=int, default=DEFAULT_FUEL, show_default=True, help="Step budget.")
probes_option = click.option("--probes", metavar="SEED,N,L", help="Probe set for comparisons.")
tol_option = click.option("--tol", type=float, default=DEFAULT_TOL, show_default=True, help="Loss tolerance.")
nonwf_option = click.option("--allow-nonwf", is_flag=True, help="Run despite a non-well-founded signature.")


@click.group()
def main() -> None:
    """Interpreter and conformance tools for the selection calculus."""


@main.command()
@click.argument("path")
@click.option("--json", "as_json", is_flag=True, help="Print diagnostics as JSON.")
@_guard
def check(path: str, as_json: bool) -> None:
    """Parse and type-check a program."""
    prog = _load(path, as_json)
    cycle = _wf_warning(prog)
    ty, eff = print_type(prog.main_ty), print_effect(prog.main_eff)
    if as_json:
        out = {"ok": True, "type": ty, "effect": eff}
        if cycle is not None:
            out["warnings"] = [f"signature not well-founded: cycle {cycle}"]
        click.echo(json.dumps(out))
    else:
        click.echo(f"ok: main : {ty} ! {eff}")


@main.command()
@click.argument("path")
@fuel_option
@click.option("--trace", "show_trace", is_flag=True, help="Print one line per reduction step.")
@click.option("--json", "as_json", is_flag=True, help="Print the report as JSON.")
@nonwf_option
@_guard
def run(path: str, fuel: int, show_trace: bool, as_json: bool, allow_nonwf: bool) -> None:
    """Run main under the zero loss continuation."""
    prog = _load(path, as_json)
    if _wf_warning(prog) is not None and not allow_nonwf:
        raise Exit(EXIT_TYPE, "refusing to run; pass --allow-nonwf to run anyway")
    sig, eps = prog.signature, prog.main_eff
    res = run_program(prog.main, prog.main_ty, eps, sig, fuel)
    out = _report(res)
    steps = []
    if show_trace:
        gamma = zero_cont(eps, prog.main_ty, sig)
        steps = trace(gamma, eps, prog.main, sig, fuel)
    if as_json:
        doc = out.to_json()
        if show_trace:
            doc["trace"] = [{"rule": rule, "loss": list(r), "expr": print_expr(e)} for rule, r, e in steps]
        click.echo(json.dumps(doc))
        return
    for rule, r, e in steps:
        click.echo(f"[{rule}] loss={L.fmt(r)} \u22a2 {print_expr(e)}")
    click.echo(out.text())


def render_giant(g: GiantValue, prog: SourceProgram, probes: ProbeSet, depth: int, indent: str = "") -> list[str]:
    if isinstance(g, Done):
        return [f"{indent}leaf {L.fmt(g.loss)} {render_value(g.value)}"]
    lines = [f"{indent}{g.label}.{g.op}#{g.index}({render_value(g.arg)}) {L.fmt(g.loss)}"]
    if depth <= 0:
        return lines + [f"{indent}  ..."]
    # resumed with values of the op's result type
    in_ty = prog.signature.op(g.op).in_ty
    for v in probes.values(in_ty, prog.signature.loss_dim):
        lines.append(f"{indent}  {render_value(v)} =>")
        lines += render_giant(g.resume(v), prog, probes, depth - 1, indent + "    ")
    return lines


@main.command()
@click.argument("path")
@fuel_option
@probes_option
@click.option("--depth", type=int, default=DEFAULT_PROBES.depth, show_default=True, help="Resume depth.")
@_guard
def giant(path: str, fuel: int, probes: str | None, depth: int) -> None:
    """Evaluate main to an effect value and print it to the given depth."""
    prog = _load(path)
    _require_wf(prog, "giant")
    sig, eps = prog.signature, prog.main_eff
    g = giant_eval(zero_cont(eps, prog.main_ty, sig), eps, prog.main, sig, fuel)
    for line in render_giant(g, prog, _probes(probes), depth):
        click.echo(line)


@main.command()
@click.argument("path")
@fuel_option
@probes_option
@tol_option
@click.option("--steps", "per_step", is_flag=True, help="Also compare every reduction step.")
@click.option("--show", is_flag=True, help="Print the denotation of main.")
@click.option("--json", "as_json", is_flag=True, help="Print the result and the denotation as JSON.")
@_guard
def oracle(path: str, fuel: int, probes: str | None, tol: float, per_step: bool, show: bool, as_json: bool) -> None:
    """Compare the operational result with the denotation."""
    prog = _load(path, as_json)
    _require_wf(prog, "oracle")
    sig, eps = prog.signature, prog.main_eff
    gamma = zero_cont(eps, prog.main_ty, sig)
    ps = _probes(probes)
    try:
        res = run_program(prog.main, prog.main_ty, eps, sig, fuel)
        if not res.stats.in_fragment:
            click.echo(f"note: {res.stats.dirty_r5} dirty and {res.stats.reparam_r5} reparameterised "
                       "handler steps; the comparison may fail", err=True)
        deep(check_eval_soundness, prog.main, gamma, eps, sig, ps, tol, fuel, result=res)
        deep(check_giant_adequacy, prog.main, gamma, eps, sig, ps, tol=tol, fuel=fuel)
        checked = ""
        if per_step:
            n = deep(check_step_soundness, prog.main, gamma, eps, sig, ps, tol, fuel)
            checked = f", {n} steps"
    except MismatchError as err:
        if as_json:
            click.echo(json.dumps({"ok": False, "mismatch": _mismatch_json(err.mismatch)}))
        raise Exit(EXIT_MISMATCH, f"mismatch: {err}") from err
    except NotWellFoundedError as err:
        raise Exit(EXIT_TYPE, str(err)) from err
    if show or as_json:
        den = Denotation(sig)
        prober = Prober(sig, ps, den)
        tree = deep(lambda: den.run_program(prog.main, eps))
        if as_json:
            click.echo(json.dumps({"ok": True, "tree": deep(tree_json, tree, prober.sems, ps.depth)}))
            return
        click.echo(deep(render_tree, tree, prober.sems, ps.depth))
    click.echo(f"ok: operational and denotational agree{checked}")


def _mismatch_json(m) -> dict:
    return {"stage": m.stage, "path": [str(p) for p in m.path], "lhs": str(m.lhs), "rhs": str(m.rhs),
            "tolerance": m.tolerance, "detail": m.detail}


@main.command()
@click.option("--count", type=int, default=1000, show_default=True, help="Accepted cases to check.")
@click.option("--seed", type=int, default=0, show_default=True, help="First case seed.")
@click.option("--max-size", type=int, default=25, show_default=True)
@click.option("--stages", default="props,step", show_default=True,
              help="Comma-separated subset of props, step, eval, giant.")
@click.option("--jobs", type=int, default=1, show_default=True, help="Worker processes.")
@click.option("--fuel", type=int, default=10**6, show_default=True, help="Step budget per case.")
@probes_option
@tol_option
@click.option("--out", type=click.Path(file_okay=False), default="selc-failures", show_default=True,
              help="Where failures are saved.")
@click.option("--replay", "replay_path", type=click.Path(exists=True, dir_okay=False),
              help="Re-run the cases of a failure manifest.")
@_guard
def fuzz(count: int, seed: int, max_size: int, stages: str, jobs: int, fuel: int, probes: str | None,
         tol: float, out: str, replay_path: str | None) -> None:
    """Differential testing on generated terms."""
    if replay_path is not None:
        rep = run_replay(Path(replay_path), fuel)
    else:
        wanted = tuple(s.strip() for s in stages.split(",") if s.strip())
        bad = set(wanted) - {"props", "step", "eval", "giant"}
        if bad:
            raise click.BadParameter(", ".join(sorted(bad)), param_hint="--stages")
        ps = _probes(probes)
        if jobs > 1:
            rep = fuzz_parallel(count, jobs, seed, max_size, ps, tol, fuel, wanted)
        else:
            rep = run_fuzz(count, seed, max_size, DEFAULT_SIG, ps, tol, fuel, wanted)
    click.echo(rep.summary())
    if rep.failures:
        for case, m in rep.failures:
            click.echo(f"seed {case.seed}: {m}", err=True)
        if replay_path is None:
            where = save_failures(rep, Path(out), max_size=max_size, tol=tol, probes=_probes(probes))
            click.echo(f"failures saved to {where}", err=True)
        raise Exit(EXIT_MISMATCH, f"{len(rep.failures)} failures")


if __name__ == "__main__":
    main()
