"""Exact-rational binary32 arithmetic, written without the package's fp code.

Finite operands go through ``fractions.Fraction`` and a single
round-half-even step; anything involving inf/NaN falls back to host
binary64 semantics, which agree with IEEE-754 for those special cases.
"""
import math
import struct
from fractions import Fraction

CANON_NAN = 0x7FFFFFFF
MASK = 0xFFFFFFFF


def value(bits):
    return struct.unpack("<f", struct.pack("<I", bits & MASK))[0]


def bits_of(x):
    if x != x:
        return CANON_NAN
    return struct.unpack("<I", struct.pack("<f", x))[0]


def is_finite(bits):
    return ((bits >> 23) & 0xFF) != 0xFF


def sign(bits):
    return (bits >> 31) & 1


def exact(bits):
    return Fraction(value(bits))


def round_rne(q: Fraction, negative_zero=False):
    """Bits of the binary32 nearest to q (ties to even)."""
    if q == 0:
        return 0x80000000 if negative_zero else 0
    neg = q < 0
    a = -q if neg else q
    e = a.numerator.bit_length() - a.denominator.bit_length()
    if Fraction(2) ** e > a:
        e -= 1
    e = max(e, -126)
    ulp = Fraction(2) ** (e - 23)
    scaled = a / ulp
    m = scaled.numerator // scaled.denominator
    rem = scaled - m
    if rem > Fraction(1, 2) or (rem == Fraction(1, 2) and m % 2 == 1):
        m += 1
    r = m * ulp
    if r >= Fraction(2) ** 128:
        return 0xFF800000 if neg else 0x7F800000
    return bits_of(-float(r) if neg else float(r))


def _special(fn, *ops):
    # with an inf/NaN operand the binary64 result is inf, NaN or an exact zero
    return bits_of(fn(*(value(o) for o in ops)))


def fadd(a, b):
    if not (is_finite(a) and is_finite(b)):
        return _special(lambda x, y: x + y, a, b)
    q = exact(a) + exact(b)
    return round_rne(q, negative_zero=(q == 0 and sign(a) and sign(b)))


def fmul(a, b):
    if not (is_finite(a) and is_finite(b)):
        return _special(lambda x, y: x * y, a, b)
    q = exact(a) * exact(b)
    return round_rne(q, negative_zero=(q == 0 and sign(a) != sign(b)))


def ffma(a, b, c):
    if not (is_finite(a) and is_finite(b) and is_finite(c)):
        return _special(lambda x, y, z: x * y + z, a, b, c)
    p = exact(a) * exact(b)
    q = p + exact(c)
    prod_neg_zero = p == 0 and sign(a) != sign(b)
    return round_rne(q, negative_zero=(q == 0 and prod_neg_zero and sign(c)))


def rcp(a):
    if not is_finite(a) or exact(a) == 0:
        return _special(lambda x: math.copysign(math.inf, x) if x == 0 else 1.0 / x, a)
    return round_rne(1 / exact(a))
