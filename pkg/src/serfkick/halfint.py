"""Exact half-integer angular momentum labels.

Spins and projections are stored as doubled integers so that coupling
coefficients can be evaluated with exact integer factorials, no floating
point until the final square root.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

__all__ = ["HalfInt", "half", "m_values", "triangle_ok"]

Spin = Union["HalfInt", int, float]


@dataclass(frozen=True, order=True)
class HalfInt:
    """Half-integer stored as twice its value (always an int)."""

    twice: int

    def __post_init__(self) -> None:
        if not isinstance(self.twice, int):
            raise TypeError(f"twice must be int, got {type(self.twice).__name__}")

    @property
    def value(self) -> float:
        return self.twice / 2

    @property
    def is_integer(self) -> bool:
        return self.twice % 2 == 0

    def __add__(self, other: Spin) -> "HalfInt":
        return HalfInt(self.twice + half(other).twice)

    def __sub__(self, other: Spin) -> "HalfInt":
        return HalfInt(self.twice - half(other).twice)

    def __neg__(self) -> "HalfInt":
        return HalfInt(-self.twice)

    def __float__(self) -> float:
        return self.value

    def __str__(self) -> str:
        if self.is_integer:
            return str(self.twice // 2)
        return f"{self.twice}/2"

    def __repr__(self) -> str:
        return f"HalfInt({self})"


def half(x: Spin) -> HalfInt:
    """Coerce an int, float or HalfInt to HalfInt; reject non-half-integers."""
    if isinstance(x, HalfInt):
        return x
    if isinstance(x, int):
        return HalfInt(2 * x)
    twice = 2 * x
    if twice != round(twice):
        raise ValueError(f"{x} is not a half-integer")
    return HalfInt(int(round(twice)))


def m_values(j: Spin) -> list[HalfInt]:
    """Projections m = j, j-1, ..., -j (descending)."""
    tj = half(j).twice
    if tj < 0:
        raise ValueError(f"spin must be non-negative, got {tj / 2}")
    return [HalfInt(t) for t in range(tj, -tj - 2, -2)]


def triangle_ok(a: Spin, b: Spin, c: Spin) -> bool:
    """Triangle rule |a-b| <= c <= a+b with integer perimeter."""
    ta, tb, tc = half(a).twice, half(b).twice, half(c).twice
    if (ta + tb + tc) % 2 != 0:
        return False
    return abs(ta - tb) <= tc <= ta + tb
