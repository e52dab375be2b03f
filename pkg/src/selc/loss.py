"""Loss vectors: elements of R = ℝ^d as tuples of floats."""

from __future__ import annotations

import math

LossVec = tuple  # tuple[float, ...]


def zero(dim: int) -> LossVec:
    return (0.0,) * dim


def add(r: LossVec, s: LossVec) -> LossVec:
    if len(r) != len(s):
        raise ValueError(f"loss dimension mismatch: {len(r)} vs {len(s)}")
    return tuple(a + b for a, b in zip(r, s))


def is_zero(r: LossVec) -> bool:
    return all(a == 0.0 for a in r)


def close(r: LossVec, s: LossVec, tol: float) -> bool:
    if len(r) != len(s):
        return False
    for a, b in zip(r, s):
        if a == b or (math.isnan(a) and math.isnan(b)):
            continue
        if math.isinf(a) or math.isinf(b) or abs(a - b) > tol:
            return False
    return True


def fmt_float(x: float) -> str:
    """Shortest decimal that round-trips (Python's repr), integral values keep `.0`."""
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def fmt(r: LossVec) -> str:
    if len(r) == 1:
        return fmt_float(r[0])
    return "<" + ", ".join(fmt_float(a) for a in r) + ">"
