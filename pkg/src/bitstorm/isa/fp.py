"""Bit-exact scalar arithmetic on 32-bit register words.

Every routine takes and returns raw bit patterns (Python or numpy ints in
0..2**32-1) so results are identical whether they run compiled inside the
interpreter kernel or are called from plain Python by the reference model.

Basic operations (add, mul, div, sqrt) are evaluated in binary64 and then
rounded once to the target format.  For these operations the double rounding
is innocuous (53 >= 2*24 + 2), so the result equals the correctly rounded
binary32 / binary16 answer.  Fused multiply-add uses round-to-odd in binary64
followed by a single rounding.  All NaN results are canonicalised so that
outputs never depend on host NaN-propagation rules.
"""
import math

import numpy as np
from numba import njit

MASK32 = 0xFFFFFFFF
CANON_NAN32 = 0x7FFFFFFF
CANON_NAN16 = 0x7FFF

LOG2E_F32 = int(np.float32(1.4426950408889634).view(np.uint32))

_LN2 = 0.6931471805599453
_SQRT_HALF = 0.7071067811865476

jit = njit(cache=True, error_model="numpy")


def flip_bit(w, b):
    """Return ``w`` with bit ``b`` (0 = LSB, 31 = sign) inverted."""
    if not 0 <= b <= 31:
        raise ValueError(f"bit index {b} outside 0..31")
    return (int(w) ^ (1 << b)) & MASK32


@jit
def f32(bits):
    return np.uint32(bits & MASK32).view(np.float32)


@jit
def bits32(x):
    """Bits of a binary32 value, with NaN canonicalised."""
    if x != x:
        return CANON_NAN32
    return np.int64(np.float32(x).view(np.uint32))


@jit
def round32(x):
    """Round a binary64 value to binary32 (nearest-even) and return its bits."""
    return bits32(np.float32(x))


@jit
def f64(bits):
    return np.float64(f32(bits))


# --------------------------------------------------------------------------
# binary16
# --------------------------------------------------------------------------

def _half_table():
    h = np.arange(65536, dtype=np.int64)
    sign = np.where(h >> 15, -1.0, 1.0)
    exp = (h >> 10) & 0x1F
    man = h & 0x3FF
    val = np.where(exp == 0, man * 2.0 ** -24, (1024 + man) * np.exp2(exp - 25.0))
    val = np.where(exp == 31, np.where(man == 0, np.inf, np.nan), val)
    return (sign * val).astype(np.float32)


H2F_TABLE = _half_table()


@jit
def half_to_f64(h):
    return np.float64(H2F_TABLE[h & 0xFFFF])


@jit
def f64_to_half(x):
    """Round a binary64 value to binary16 bits (nearest-even, IEEE subnormals)."""
    s = np.float64(x).view(np.int64)
    sign = (s >> 63) & 1
    e = (s >> 52) & 0x7FF
    m = s & 0xFFFFFFFFFFFFF
    if e == 0x7FF:
        if m != 0:
            return CANON_NAN16
        return (sign << 15) | 0x7C00
    if e == 0:
        return sign << 15
    E = e - 1023
    full = (1 << 52) | m
    if E >= -14:
        rshift = 42
    else:
        rshift = 28 - E
    if rshift > 60:
        return sign << 15
    q = full >> rshift
    rem = full & ((1 << rshift) - 1)
    half = 1 << (rshift - 1)
    if rem > half or (rem == half and (q & 1) == 1):
        q += 1
    if E >= -14:
        if q == 2048:
            q = 1024
            E += 1
        if E > 15:
            return (sign << 15) | 0x7C00
        return (sign << 15) | ((E + 15) << 10) | (q - 1024)
    return (sign << 15) | q


@jit
def f32_to_half(bits):
    return f64_to_half(f64(bits))


@jit
def half_lo(w):
    return w & 0xFFFF


@jit
def half_hi(w):
    return (w >> 16) & 0xFFFF


# --------------------------------------------------------------------------
# fused multiply-add helper
# --------------------------------------------------------------------------

@jit
def _fma_odd(p, z):
    """p + z in binary64 with round-to-odd (p, z finite)."""
    s = p + z
    if not math.isfinite(s):
        return s
    bb = s - p
    err = (p - (s - bb)) + (z - bb)
    if err != 0.0:
        si = np.float64(s).view(np.int64)
        if (si & 1) == 0:
            if (err > 0.0) == (s > 0.0):
                si += 1
            else:
                si -= 1
            s = np.int64(si).view(np.float64)
    return s


@jit
def _fma64(x, y, z):
    p = x * y
    if not (math.isfinite(p) and math.isfinite(z)):
        return p + z
    return _fma_odd(p, z)


# --------------------------------------------------------------------------
# binary32 operations on bit patterns
# --------------------------------------------------------------------------

@jit
def fadd(a, b):
    return round32(f64(a) + f64(b))


@jit
def fmul(a, b):
    return round32(f64(a) * f64(b))


@jit
def ffma(a, b, c):
    return round32(_fma64(f64(a), f64(b), f64(c)))


@jit
def rcp(a):
    return round32(1.0 / f64(a))


@jit
def rsq(a):
    x = f64(a)
    if x < 0.0:
        return CANON_NAN32
    return round32(1.0 / math.sqrt(x))


@jit
def ex2(a):
    x = f64(a)
    if x != x:
        return CANON_NAN32
    if x >= 128.0:
        return 0x7F800000
    if x < -150.0:
        return 0
    n = math.floor(x)
    t = (x - n) * _LN2
    term = 1.0
    acc = 1.0
    for k in range(1, 24):
        term = term * t / k
        acc += term
    return round32(math.ldexp(acc, int(n)))


@jit
def lg2(a):
    x = f64(a)
    if x != x or x < 0.0:
        return CANON_NAN32
    if x == 0.0:
        return 0xFF800000
    if math.isinf(x):
        return 0x7F800000
    m, e = math.frexp(x)
    if m < _SQRT_HALF:
        m *= 2.0
        e -= 1
    s = (m - 1.0) / (m + 1.0)
    s2 = s * s
    term = s
    acc = 0.0
    for k in range(0, 16):
        acc += term / (2 * k + 1)
        term *= s2
    return round32(e + 2.0 * acc / _LN2)


@jit
def fcmp(a, b, code):
    """Compare two binary32 values; NaN makes every predicate except NE false."""
    x = f64(a)
    y = f64(b)
    if code == 0:
        return x < y
    if code == 1:
        return x <= y
    if code == 2:
        return x == y
    if code == 3:
        return x != y
    if code == 4:
        return x >= y
    return x > y


@jit
def s32(w):
    w = w & MASK32
    if w >= 0x80000000:
        return w - 0x100000000
    return w


@jit
def icmp(a, b, code):
    x = s32(a)
    y = s32(b)
    if code == 0:
        return x < y
    if code == 1:
        return x <= y
    if code == 2:
        return x == y
    if code == 3:
        return x != y
    if code == 4:
        return x >= y
    return x > y


# --------------------------------------------------------------------------
# packed binary16 operations
# --------------------------------------------------------------------------

@jit
def hadd2(a, b):
    lo = f64_to_half(half_to_f64(a) + half_to_f64(b))
    hi = f64_to_half(half_to_f64(a >> 16) + half_to_f64(b >> 16))
    return lo | (hi << 16)


@jit
def hmul2(a, b):
    lo = f64_to_half(half_to_f64(a) * half_to_f64(b))
    hi = f64_to_half(half_to_f64(a >> 16) * half_to_f64(b >> 16))
    return lo | (hi << 16)


@jit
def hfma2(a, b, c):
    lo = f64_to_half(_fma64(half_to_f64(a), half_to_f64(b), half_to_f64(c)))
    hi = f64_to_half(_fma64(half_to_f64(a >> 16), half_to_f64(b >> 16), half_to_f64(c >> 16)))
    return lo | (hi << 16)


@jit
def f2h2(a, b):
    return f32_to_half(a) | (f32_to_half(b) << 16)


@jit
def h2f(h):
    return round32(half_to_f64(h))


@jit
def hmma_step(a, b, c):
    """fp32(a.lo)*fp32(b.lo) + fp32(a.hi)*fp32(b.hi) + c, left to right in fp32."""
    p1 = h2f(a & 0xFFFF)
    p1 = fmul(p1, h2f(b & 0xFFFF))
    p2 = fmul(h2f((a >> 16) & 0xFFFF), h2f((b >> 16) & 0xFFFF))
    return fadd(fadd(p1, p2), c)


# --------------------------------------------------------------------------
# integer operations
# --------------------------------------------------------------------------

@jit
def lop3(a, b, c, lut):
    r = 0
    na = ~a & MASK32
    nb = ~b & MASK32
    nc = ~c & MASK32
    for i in range(8):
        if (lut >> i) & 1:
            x = a if i & 4 else na
            y = b if i & 2 else nb
            z = c if i & 1 else nc
            r |= x & y & z
    return r & MASK32


@jit
def shf(a, b, shift):
    """Funnel shift right of the 64-bit pair hi=b, lo=a."""
    shift &= 31
    if shift == 0:
        return a & MASK32
    return ((a >> shift) | (b << (32 - shift))) & MASK32
