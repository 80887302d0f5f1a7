"""Exact sums of doubles.

Every finite double is an integer multiple of 2**-1074, so a running sum of
doubles can be held exactly as one big integer at that scale. Additions are
plain integer additions; conversion back to float is correctly rounded.
"""

from __future__ import annotations

import numbers
from fractions import Fraction

_SHIFT = 1074
_DEN = 1 << _SHIFT


class Dyadic:
    __slots__ = ("m",)

    def __init__(self, m: int = 0):
        self.m = m

    @classmethod
    def from_float(cls, v: float) -> "Dyadic":
        n, d = v.as_integer_ratio()
        return cls(n << (_SHIFT + 1 - d.bit_length()))

    @staticmethod
    def _coerce(o):
        if isinstance(o, Dyadic):
            return o.m
        if isinstance(o, float):
            return Dyadic.from_float(o).m
        if isinstance(o, int):
            return o << _SHIFT
        return None

    def __add__(self, o):
        m = self._coerce(o)
        if m is None:
            return Fraction(self) + o if isinstance(o, Fraction) else NotImplemented
        return Dyadic(self.m + m)

    __radd__ = __add__

    def __sub__(self, o):
        m = self._coerce(o)
        if m is None:
            return Fraction(self) - o if isinstance(o, Fraction) else NotImplemented
        return Dyadic(self.m - m)

    def __rsub__(self, o):
        m = self._coerce(o)
        if m is None:
            return o - Fraction(self) if isinstance(o, Fraction) else NotImplemented
        return Dyadic(m - self.m)

    def __neg__(self):
        return Dyadic(-self.m)

    def __abs__(self):
        return Dyadic(abs(self.m))

    def __mul__(self, o):
        if isinstance(o, int):
            return Dyadic(self.m * o)
        if isinstance(o, Fraction):
            return Fraction(self) * o
        return NotImplemented

    __rmul__ = __mul__

    def __float__(self) -> float:
        return self.m / _DEN

    @property
    def numerator(self) -> int:
        return Fraction(self.m, _DEN).numerator

    @property
    def denominator(self) -> int:
        return Fraction(self.m, _DEN).denominator

    def __eq__(self, o):
        if isinstance(o, Dyadic):
            return self.m == o.m
        if isinstance(o, (int, float, Fraction)):
            return Fraction(self.m, _DEN) == o
        return NotImplemented

    def __hash__(self):
        return hash(Fraction(self.m, _DEN))

    def __lt__(self, o):
        return Fraction(self) < o

    def __gt__(self, o):
        return Fraction(self) > o

    def __str__(self):
        return str(Fraction(self.m, _DEN))

    def __repr__(self):
        return f"Dyadic({self})"


numbers.Rational.register(Dyadic)
