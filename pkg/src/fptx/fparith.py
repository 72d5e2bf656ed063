"""Simulated floating-point scalar arithmetic.

The model of computation: every elementary operation (+, -, *, /, exp, sqrt)
is evaluated in reference arithmetic (hardware double precision) and the
result is rounded to the nearest representable number of the simulated
system, ties to even.  Two simulated systems are supported, a binary one
with a t-bit significand and a decimal one with s significant digits, plus
the native double-precision reference for which rounding is the identity.

The exponent range is unbounded: overflow, underflow and subnormals of the
simulated system are not modeled.  The reference arithmetic contributes a
relative error of at most 2^-53 per operation, which is at least eight
orders of magnitude below the coarsest simulated precision intended for
experiments (12 decimal digits / 40 bits), so simulated results behave as
correctly rounded for every practical purpose.  The rounding kernels are
exact for binary mode and documented to honour the half-ulp error bound
for inputs with magnitude in [1e-280, 1e280] (or zero) in decimal mode.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, PrecisionError

DOUBLE_UNIT_ROUNDOFF = 2.0 ** -53

# np.exp overflows double precision just above this argument.
EXP_OVERFLOW_LIMIT = 700.0


class Mode(enum.Enum):
    NATIVE = "native"
    BINARY = "binary"
    DECIMAL = "decimal"


@dataclass(frozen=True)
class PrecisionSpec:
    """A simulated floating-point system: rounding mode and precision.

    ``value`` is the significand width: bits for BINARY, significant
    digits for DECIMAL; it is ignored for NATIVE.
    """

    mode: Mode
    value: int = 0

    def __post_init__(self):
        if self.mode is Mode.BINARY and self.value < 2:
            raise ValueError("binary significand needs at least 2 bits")
        if self.mode is Mode.DECIMAL and self.value < 1:
            raise ValueError("decimal mode needs at least 1 significant digit")

    @classmethod
    def binary(cls, t: int) -> "PrecisionSpec":
        return cls(Mode.BINARY, t)

    @classmethod
    def decimal(cls, s: int) -> "PrecisionSpec":
        return cls(Mode.DECIMAL, s)

    @classmethod
    def native(cls) -> "PrecisionSpec":
        return cls(Mode.NATIVE)

    @classmethod
    def parse(cls, text: str) -> "PrecisionSpec":
        """Parse 'b:<bits>', 'd:<digits>' or 'native'."""
        text = text.strip().lower()
        if text == "native":
            return cls.native()
        try:
            kind, _, num = text.partition(":")
            if kind == "b":
                return cls.binary(int(num))
            if kind == "d":
                return cls.decimal(int(num))
        except ValueError:
            pass
        raise ValueError(f"cannot parse precision spec {text!r}")

    @property
    def label(self) -> str:
        if self.mode is Mode.NATIVE:
            return "native"
        return f"{'b' if self.mode is Mode.BINARY else 'd'}:{self.value}"


NATIVE = PrecisionSpec.native()


def unit_roundoff(spec: PrecisionSpec) -> float:
    """Half the relative spacing of the system: u = beta^(1-t) / 2."""
    if spec.mode is Mode.NATIVE:
        return DOUBLE_UNIT_ROUNDOFF
    if spec.mode is Mode.BINARY:
        return 0.5 * 2.0 ** (1 - spec.value)
    return 0.5 * 10.0 ** (1 - spec.value)


def _round_binary(a, t: int):
    # x = m * 2^e with 0.5 <= |m| < 1; round m to t bits, ties to even.
    # All three steps are exact in double precision for t <= 53 and
    # well-scaled inputs, so this kernel is exact round-to-nearest.
    m, e = np.frexp(a)
    return np.ldexp(np.rint(np.ldexp(m, t)), e - t)


def _round_decimal(a, s: int):
    # Scale the mantissa to an integer with s digits, round ties-to-even,
    # scale back.  The scale factor 10^|k| is used on whichever side keeps
    # it an exact double (|k| <= 22), so the descaling step is a single
    # correctly-rounded operation on the true decimal value; this keeps
    # the kernel idempotent and within the half-ulp bound.
    with np.errstate(divide="ignore", invalid="ignore"):
        e = np.floor(np.log10(np.abs(a)))
    e = np.where(np.isfinite(e), e, 0.0)
    k = (s - 1) - e
    f = 10.0 ** np.abs(k)
    with np.errstate(invalid="ignore", over="ignore"):
        m = np.rint(np.where(k >= 0, a * f, a / f))
        bump = np.abs(m) >= 10.0 ** s
        if np.any(bump):
            # the mantissa rounded up a full decade; renormalize so the
            # result is the canonical form of 10^(e+1)
            m = np.where(bump, m / 10.0, m)
            k = np.where(bump, k - 1, k)
            f = 10.0 ** np.abs(k)
        out = np.where(k >= 0, m / f, m * f)
    # Non-finite inputs pass through untouched.
    return np.where(np.isfinite(a), out, a)


def round_to_precision(x, spec: PrecisionSpec):
    """Round a scalar or array to the nearest representable value of ``spec``.

    Idempotent, sign-preserving, and |fl(x) - x| <= u |x| with
    u = unit_roundoff(spec).
    """
    if spec.mode is Mode.NATIVE:
        return x
    scalar = np.isscalar(x) or getattr(x, "ndim", 0) == 0
    a = np.asarray(x, dtype=np.float64)
    if spec.mode is Mode.BINARY:
        out = _round_binary(a, spec.value)
    else:
        out = _round_decimal(a, spec.value)
    return float(out) if scalar else out


def rounder(spec: PrecisionSpec):
    """Return the rounding kernel of ``spec`` as a plain callable.

    For NATIVE this is the identity, which lets evaluation loops skip
    per-operation work entirely.
    """
    if spec.mode is Mode.NATIVE:
        return lambda a: a
    if spec.mode is Mode.BINARY:
        t = spec.value
        return lambda a: _round_binary(a, t)
    s = spec.value
    return lambda a: _round_decimal(a, s)


_BIN_OPS = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
}


def fl_bin(a, op: str, b, spec: PrecisionSpec):
    """Rounded binary operation: fl(a op b) = (a op b)(1 + delta), |delta| <= u.

    Operands are expected to be representable under ``spec``; scalars and
    same-shape arrays (elementwise) are both accepted.
    """
    if op not in _BIN_OPS:
        raise ValueError(f"unknown operation {op!r}")
    if op == "/" and np.any(np.asarray(b) == 0.0):
        raise DomainError("division by zero")
    return round_to_precision(_BIN_OPS[op](a, b), spec)


def fl_unary(fn: str, x, spec: PrecisionSpec):
    """Rounded elementary function, fn in {'exp', 'sqrt'}."""
    if fn == "sqrt":
        if np.any(np.asarray(x) < 0.0):
            raise DomainError("sqrt of a negative number")
        return round_to_precision(np.sqrt(x), spec)
    if fn == "exp":
        return round_to_precision(np.exp(x), spec)
    raise ValueError(f"unknown elementary function {fn!r}")


def gamma_value(n: int, u: float) -> float:
    """gamma_n = n u / (1 - n u); requires n u < 1."""
    if n < 0:
        raise ValueError("operation count must be nonnegative")
    nu = n * u
    if nu >= 1.0:
        raise PrecisionError(f"gamma_{n} undefined: n*u = {nu} >= 1")
    return nu / (1.0 - nu)


def gamma(n: int, spec: PrecisionSpec) -> float:
    return gamma_value(n, unit_roundoff(spec))


@dataclass(frozen=True)
class GammaBudget:
    """An aggregate rounding budget for n operations at unit roundoff u."""

    n: int
    u: float

    @property
    def value(self) -> float:
        return gamma_value(self.n, self.u)


def exact_sqrt(x: float) -> float:
    """Reference-arithmetic square root of a nonnegative scalar constant."""
    if x < 0:
        raise DomainError("sqrt of a negative number")
    return math.sqrt(x)
