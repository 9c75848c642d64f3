"""Hash string -> unit-L2 feature vector, normalized in exact decimal arithmetic.

Binary float64 sqrt/division lose the trailing digits of the normalized
components, so the norm and every quotient are computed on scaled integers
with 18 fractional digits and only the final quotient is converted to float.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .descriptor import decode_hash

FRAC_DIGITS = 18


@dataclass(frozen=True)
class ExactDecimal:
    """``unscaled * 10**-scale``, held exactly."""

    unscaled: int
    scale: int

    def __str__(self) -> str:
        sign = "-" if self.unscaled < 0 else ""
        digits = str(abs(self.unscaled))
        if self.scale == 0:
            return sign + digits
        digits = digits.rjust(self.scale + 1, "0")
        return f"{sign}{digits[:-self.scale]}.{digits[-self.scale:]}"

    def __float__(self) -> float:
        # float(str) is correctly rounded, matching a parseFloat of the decimal text
        return float(str(self))

    def rescale(self, scale: int) -> "ExactDecimal":
        if scale < self.scale:
            raise ValueError("rescale would drop digits")
        return ExactDecimal(self.unscaled * 10 ** (scale - self.scale), scale)

    def __add__(self, other: "ExactDecimal") -> "ExactDecimal":
        s = max(self.scale, other.scale)
        return ExactDecimal(self.rescale(s).unscaled + other.rescale(s).unscaled, s)

    def __sub__(self, other: "ExactDecimal") -> "ExactDecimal":
        s = max(self.scale, other.scale)
        return ExactDecimal(self.rescale(s).unscaled - other.rescale(s).unscaled, s)

    def __mul__(self, other: "ExactDecimal") -> "ExactDecimal":
        return ExactDecimal(self.unscaled * other.unscaled, self.scale + other.scale)

    @classmethod
    def from_int(cls, n: int, scale: int = 0) -> "ExactDecimal":
        return cls(n * 10**scale, scale)


def isqrt_newton(n: int) -> int:
    """floor(sqrt(n)) for a non-negative integer, by integer Newton iteration."""
    if n < 0:
        raise ValueError("square root of a negative number")
    if n < 2:
        return n
    # start above the root so the iteration decreases monotonically
    x = 1 << ((n.bit_length() + 1) // 2)
    while True:
        y = (x + n // x) // 2
        if y >= x:
            return x
        x = y


def exact_sqrt(n: int, frac_digits: int = FRAC_DIGITS) -> ExactDecimal:
    """sqrt(n) truncated to ``frac_digits`` fractional digits.

    The result ``r`` satisfies ``r**2 <= n < (r + 10**-frac_digits)**2``.
    """
    if n < 0:
        raise ValueError(f"square root of negative number {n}")
    return ExactDecimal(isqrt_newton(n * 10 ** (2 * frac_digits)), frac_digits)


def _div_half_even(num: int, den: int) -> int:
    q, r = divmod(num, den)
    twice = 2 * r
    if twice > den or (twice == den and q % 2 == 1):
        q += 1
    return q


def exact_div(a: int, b: ExactDecimal, frac_digits: int = FRAC_DIGITS) -> ExactDecimal:
    """a / b rounded half-even to ``frac_digits`` fractional digits."""
    if b.unscaled == 0:
        raise ZeroDivisionError("division by zero")
    num = a * 10 ** (b.scale + frac_digits)
    den = b.unscaled
    if den < 0:
        num, den = -num, -den
    return ExactDecimal(_div_half_even(num, den), frac_digits)


def normalize_coeffs(coeffs: Sequence[int], frac_digits: int = FRAC_DIGITS) -> np.ndarray:
    """L2-normalize non-negative integer coefficients with exact intermediates.

    No range check on the coefficients, so scaled synthetic inputs are accepted.
    An all-zero input yields the all-zero vector.
    """
    total = sum(int(c) * int(c) for c in coeffs)
    if total == 0:
        return np.zeros(len(coeffs))
    norm = exact_sqrt(total, frac_digits)
    return np.array([float(exact_div(int(c), norm, frac_digits)) for c in coeffs])


def normalize_hash(s: str) -> np.ndarray:
    """Parse a 100-word hex hash string and return its unit feature vector."""
    return normalize_coeffs(decode_hash(s))
