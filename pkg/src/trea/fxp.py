"""Signed two's-complement fixed-point arithmetic and MSD-guided power-of-two
weight decomposition.

All bit-accurate work happens on raw integers; floats only enter at the
encode/decode boundary. A weight with magnitude below one is split greedily
into signed power-of-two terms, most significant digit first, so a multiply
becomes a short cascade of arithmetic shifts and adds.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import AllZeroError, DomainError, RangeError

__all__ = [
    "FxPFormat",
    "FxPValue",
    "PoTTerm",
    "PoTDecomposition",
    "FXP4",
    "FXP8",
    "encode",
    "decode",
    "trunc_shift",
    "mn_normalize",
    "msd_decompose",
    "potq_multiply",
    "error_bound",
    "error_sweep",
]


@dataclass(frozen=True)
class FxPFormat:
    """N-bit signed fixed-point layout with F fractional bits (N >= F + 1)."""

    total_bits: int
    frac_bits: int

    def __post_init__(self):
        if not 2 <= self.total_bits <= 32:
            raise ValueError(f"total_bits must be in 2..32, got {self.total_bits}")
        if not 1 <= self.frac_bits <= self.total_bits - 1:
            raise ValueError(
                f"frac_bits must be in 1..{self.total_bits - 1}, got {self.frac_bits}"
            )

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def min_value(self) -> float:
        return self.raw_min * self.lsb

    @property
    def max_value(self) -> float:
        return self.raw_max * self.lsb


FXP4 = FxPFormat(4, 3)
FXP8 = FxPFormat(8, 7)


@dataclass(frozen=True)
class FxPValue:
    """Raw two's-complement integer plus its format; value = raw * 2**-F."""

    raw: int
    fmt: FxPFormat

    def __post_init__(self):
        object.__setattr__(self, "raw", int(self.raw))
        if not self.fmt.raw_min <= self.raw <= self.fmt.raw_max:
            raise RangeError(
                f"raw {self.raw} outside [{self.fmt.raw_min}, {self.fmt.raw_max}]"
            )

    @property
    def value(self) -> float:
        return self.raw * self.fmt.lsb


def encode(value: float, fmt: FxPFormat) -> FxPValue:
    """Round-to-nearest-even encode. Out-of-range input is an error, never
    saturation."""
    if not np.isfinite(value):
        raise RangeError(f"cannot encode non-finite value {value}")
    if value < fmt.min_value or value > fmt.max_value:
        raise RangeError(
            f"{value} outside representable range "
            f"[{fmt.min_value}, {fmt.max_value}] of {fmt}"
        )
    # Python round() is banker's rounding; the product is exact in float64
    # for any format up to 32 bits.
    return FxPValue(round(value * (1 << fmt.frac_bits)), fmt)


def decode(x: FxPValue) -> float:
    return x.raw * x.fmt.lsb


def trunc_shift(x: FxPValue, m: int) -> FxPValue:
    """Arithmetic right shift by m: floor semantics, dropped LSBs are lost.

    Matches a hardware shifter; per-shift truncation error lies in
    [0, 2**-F) of the true scaled value.
    """
    if m < 0:
        raise DomainError(f"shift count must be nonnegative, got {m}")
    return FxPValue(x.raw >> m, x.fmt)


def mn_normalize(weights, fmt: FxPFormat = FXP8):
    """Maximum-normalize weights so every magnitude encodes strictly below 1.

    Returns (scale, normalized) with weights == scale * normalized. The scale
    carries one LSB of relative headroom: the largest normalized magnitude
    lands exactly on 1 - 2**-F, the top representable value of `fmt`.
    """
    w = np.asarray(weights, dtype=np.float64)
    max_abs = float(np.max(np.abs(w))) if w.size else 0.0
    if max_abs == 0.0:
        raise AllZeroError("cannot normalize an all-zero weight set")
    scale = max_abs / (1.0 - fmt.lsb)
    top = 1.0 - fmt.lsb
    # float division may overshoot the top code by one double ulp; pin it
    normalized = np.clip(w / scale, -top, top)
    return scale, normalized


@dataclass(frozen=True)
class PoTTerm:
    """One signed power-of-two component: value = sign * 2**-shift."""

    sign: int
    shift: int

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")
        if self.shift < 0:
            raise ValueError(f"shift must be nonnegative, got {self.shift}")

    @property
    def value(self) -> Fraction:
        return Fraction(self.sign, 1 << self.shift)


@dataclass(frozen=True)
class PoTDecomposition:
    """MSD-first signed PoT expansion of a weight plus its exact residual."""

    terms: tuple[PoTTerm, ...]
    residual: Fraction
    iterations: int

    def approximation(self) -> Fraction:
        return sum((t.value for t in self.terms), Fraction(0))


def _decompose_raw(raw: int, frac_bits: int, t_max: int):
    """Greedy MSD extraction on the raw integer; exact by construction."""
    terms = []
    r = int(raw)
    for _ in range(t_max):
        if r == 0:
            break
        sign = 1 if r > 0 else -1
        # largest power of two <= |residual|: shift = F - floor(log2 |r|)
        m = frac_bits - (abs(r).bit_length() - 1)
        terms.append((sign, m))
        r -= sign * (1 << (frac_bits - m))
    return terms, r


def msd_decompose(w: FxPValue, t: int) -> PoTDecomposition:
    """Greedy most-significant-digit-first PoT decomposition of a weight.

    Each step peels the largest power of two not exceeding the current
    residual magnitude, so shifts strictly increase, the residual magnitude
    strictly decreases, and after k steps the residual is below 2**-k.
    Terminates early once the residual is exactly zero (at most F steps for
    any representable weight).
    """
    if t < 1:
        raise DomainError(f"iteration count must be >= 1, got {t}")
    if abs(w.raw) >= (1 << w.fmt.frac_bits):
        raise DomainError(f"|{decode(w)}| >= 1; decomposition needs |w| < 1")
    raw_terms, residual_raw = _decompose_raw(w.raw, w.fmt.frac_bits, t)
    terms = tuple(PoTTerm(s, m) for s, m in raw_terms)
    return PoTDecomposition(
        terms=terms,
        residual=Fraction(residual_raw, 1 << w.fmt.frac_bits),
        iterations=len(terms),
    )


def potq_multiply(x: FxPValue, w: FxPValue, t: int) -> FxPValue:
    """Multiplier-free product: sum of truncated shifted copies of x.

    The weight is decomposed into at most t signed PoT terms; each term
    contributes an arithmetic right shift of x, truncated at the format LSB
    before accumulation. The result provably fits the operand format, so the
    final truncation back to N bits never wraps.
    """
    if x.fmt != w.fmt:
        raise DomainError(f"operand formats differ: {x.fmt} vs {w.fmt}")
    dec = msd_decompose(w, t)
    acc = 0
    for term in dec.terms:
        acc += term.sign * (x.raw >> term.shift)
    return FxPValue(acc, x.fmt)


def error_bound(x: FxPValue, t: int, frac_bits: int) -> float:
    """Worst-case product error: residual part |x| * 2**-t plus one LSB of
    truncation per accumulated term."""
    return abs(decode(x)) * 2.0 ** -t + t * 2.0 ** -frac_bits


def error_sweep(fmt: FxPFormat, t_values) -> list[tuple[int, float, float]]:
    """Exhaustive (x, w) product-error statistics per iteration count.

    Sweeps every operand pair of the format with |w| < 1 and returns rows
    (t, max_abs_error, mean_abs_error) against the exact real product.
    """
    f = fmt.frac_bits
    xs = np.arange(fmt.raw_min, fmt.raw_max + 1, dtype=np.int64)
    w_raws = [w for w in range(fmt.raw_min, fmt.raw_max + 1) if abs(w) < (1 << f)]
    rows = []
    for t in t_values:
        if t < 1:
            raise DomainError(f"iteration count must be >= 1, got {t}")
        max_err = 0.0
        err_sum = 0.0
        count = 0
        for w in w_raws:
            raw_terms, _ = _decompose_raw(w, f, t)
            acc = np.zeros_like(xs)
            for sign, m in raw_terms:
                acc += sign * (xs >> m)
            exact = xs.astype(np.float64) * w * 2.0 ** (-2 * f)
            err = np.abs(exact - acc.astype(np.float64) * fmt.lsb)
            max_err = max(max_err, float(err.max()))
            err_sum += float(err.sum())
            count += err.size
        rows.append((t, max_err, err_sum / count))
    return rows
