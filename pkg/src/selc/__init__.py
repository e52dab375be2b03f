"""An interpreter, type checker and denotational oracle for a calculus of
algebraic effect handlers with choice continuations and a loss effect."""

from .operational import DEFAULT_FUEL, FuelExhausted, run_program
from .parser import ParseError, parse_program
from .typecheck import TypeCheckError

__all__ = ["DEFAULT_FUEL", "FuelExhausted", "ParseError", "TypeCheckError", "parse_program", "run_program"]
__version__ = "0.1.0"
