"""Reconfigurable CORDIC-based activation unit: ReLU, Sigmoid, Tanh behind a
2-bit select, one shared 9-stage hyperbolic pipeline.

The datapath runs rotation-mode hyperbolic CORDIC at 16 internal fractional
bits over iteration indices 1..8 with the mandatory repeat at 4 (nine
rotations total). Gain compensation is folded in as one constant multiply
realized as a PoT shift-add cascade. Tanh divides sinh by cosh (the shared
gain cancels in the ratio); sigmoid rides on the tanh half-argument
identity, which keeps everything on the one datapath. Inputs beyond the
CORDIC convergence range are reduced by repeated argument halving and
rebuilt with the double-angle identity; inputs past the saturation point of
the output format are pinned at the largest representable value below one.

Everything here is pure; the pipeline itself is a timing model
(piso_latency), not a stateful object. Array-valued helpers (suffix
``_vec``) run the identical integer arithmetic elementwise so batched
callers get bit-identical results to the scalar ops.
"""

from __future__ import annotations

import math
from enum import IntEnum
from functools import lru_cache

import numpy as np

from .errors import ConvergenceDomainError, DomainError, InvalidSelect
from .fxp import FxPFormat, FxPValue, msd_decompose

__all__ = [
    "AfSelect",
    "INTERNAL_FRAC_BITS",
    "PIPELINE_STAGES",
    "cordic_sinh_cosh",
    "convergence_bound",
    "saturation_threshold",
    "af_tanh",
    "af_sigmoid",
    "af_relu",
    "apply",
    "piso_latency",
    "tanh_raw_vec",
    "sigmoid_raw_vec",
    "relu_raw_vec",
]

INTERNAL_FRAC_BITS = 16
_ONE = 1 << INTERNAL_FRAC_BITS
PIPELINE_STAGES = 9


class AfSelect(IntEnum):
    """2-bit runtime activation select; code 3 is reserved."""

    RELU = 0
    SIGMOID = 1
    TANH = 2

    @classmethod
    def from_code(cls, code: int) -> "AfSelect":
        if code not in (0, 1, 2):
            raise InvalidSelect(f"activation select code {code} is reserved")
        return cls(code)


def _iteration_schedule(n: int) -> tuple[int, ...]:
    # hyperbolic indices start at 1; indices 4, 13, 40, ... repeat once to
    # keep the angle set convergent
    out, i, rep = [], 1, 4
    while len(out) < n:
        out.append(i)
        if i == rep and len(out) < n:
            out.append(i)
            rep = rep * 3 + 1
        i += 1
    return tuple(out[:n])


@lru_cache(maxsize=None)
def _tables(iterations: int):
    """(schedule, atanh table, convergence bound, gain-compensation terms),
    all at the internal scale."""
    if iterations < 1:
        raise DomainError(f"iterations must be >= 1, got {iterations}")
    sched = _iteration_schedule(iterations)
    atanh = tuple(round(math.atanh(2.0 ** -i) * _ONE) for i in sched)
    zmax = sum(atanh)
    gain = 1.0
    for i in sched:
        gain *= math.sqrt(1.0 - 4.0 ** (-i))
    # compensation constant c = 1/gain - 1 < 1, applied as v + sum(s*(v>>m))
    comp = FxPValue(round((1.0 / gain - 1.0) * _ONE), FxPFormat(18, INTERNAL_FRAC_BITS))
    comp_terms = tuple(
        (t.sign, t.shift) for t in msd_decompose(comp, INTERNAL_FRAC_BITS).terms
    )
    return sched, atanh, zmax, comp_terms


def convergence_bound(iterations: int = PIPELINE_STAGES) -> float:
    """Largest |z| the rotation schedule can absorb, in real units."""
    return _tables(iterations)[2] / _ONE


def _rotate_vec(z, iterations):
    """Rotation-mode hyperbolic CORDIC over int64 arrays at internal scale."""
    sched, atanh, _, _ = _tables(iterations)
    x = np.full_like(z, _ONE)
    y = np.zeros_like(z)
    for idx, i in enumerate(sched):
        pos = z >= 0
        dx = np.where(pos, y >> i, -(y >> i))
        dy = np.where(pos, x >> i, -(x >> i))
        z = z - np.where(pos, atanh[idx], -atanh[idx])
        x = x + dx
        y = y + dy
    return y, x


def _gain_comp_vec(v, iterations):
    acc = v.copy()
    for sign, m in _tables(iterations)[3]:
        acc += sign * (v >> m)
    return acc


def _div_round_vec(num, den, out_f):
    # round-half-up on magnitudes; den strictly positive
    mag = (np.abs(num) << out_f) + (den >> 1)
    q = mag // den
    return np.where(num < 0, -q, q)


def _rescale_round_even_vec(raw, from_f, to_f):
    if to_f >= from_f:
        return raw << (to_f - from_f)
    sh = from_f - to_f
    q = raw >> sh
    r = raw - (q << sh)
    half = 1 << (sh - 1)
    up = (r > half) | ((r == half) & ((q & 1) == 1))
    return q + up


def _to_internal_vec(raw, frac_bits):
    raw = np.asarray(raw, dtype=np.int64)
    if frac_bits <= INTERNAL_FRAC_BITS:
        return raw << (INTERNAL_FRAC_BITS - frac_bits)
    return raw >> (frac_bits - INTERNAL_FRAC_BITS)


def _tanh_internal_vec(z, iterations):
    """tanh at internal scale for any z; halving range reduction as needed."""
    sign = np.where(z < 0, -1, 1)
    a = np.abs(z)
    zmax = _tables(iterations)[2]
    k = np.zeros_like(a)
    over = a > zmax
    while over.any():
        a = np.where(over, a >> 1, a)
        k = k + over
        over = a > zmax
    y, x = _rotate_vec(a, iterations)
    t = _div_round_vec(y, x, INTERNAL_FRAC_BITS)
    nz = a == 0
    t = np.where(nz, 0, t)
    for step in range(int(k.max()) if k.size else 0):
        num = 2 * t
        den = _ONE + ((t * t) >> INTERNAL_FRAC_BITS)
        t = np.where(k > step, _div_round_vec(num, den, INTERNAL_FRAC_BITS), t)
    return sign * t


def saturation_threshold(frac_bits: int) -> float:
    """Smallest input whose true tanh rounds to the top code of an output
    format with `frac_bits` fractional bits (derived from the oracle, not
    hard-coded)."""
    return math.atanh(1.0 - 2.0 ** -(frac_bits + 1))


def tanh_raw_vec(raw, in_frac_bits: int, out_frac_bits: int, iterations: int = PIPELINE_STAGES):
    """Elementwise fixed-point tanh on raw integers; odd-symmetric by
    construction."""
    z = _to_internal_vec(raw, in_frac_bits)
    top = (1 << out_frac_bits) - 1
    sat = round(saturation_threshold(out_frac_bits) * _ONE)
    t = _tanh_internal_vec(z, iterations)
    out = _rescale_round_even_vec(t, INTERNAL_FRAC_BITS, out_frac_bits)
    out = np.clip(out, -top, top)
    return np.where(np.abs(z) >= sat, np.where(z < 0, -top, top), out)


def sigmoid_raw_vec(raw, in_frac_bits: int, out_frac_bits: int, iterations: int = PIPELINE_STAGES):
    """Elementwise fixed-point sigmoid via (1 + tanh(x/2)) / 2; the halving
    is exact at the internal scale."""
    raw = np.asarray(raw, dtype=np.int64)
    if in_frac_bits + 1 <= INTERNAL_FRAC_BITS:
        z = raw << (INTERNAL_FRAC_BITS - in_frac_bits - 1)
    else:
        z = raw >> (in_frac_bits + 1 - INTERNAL_FRAC_BITS)
    t = _tanh_internal_vec(z, iterations)
    # 1 + tanh is the sigmoid at one extra fractional bit
    out = _rescale_round_even_vec(_ONE + t, INTERNAL_FRAC_BITS + 1, out_frac_bits)
    return np.clip(out, 0, (1 << out_frac_bits) - 1)


def relu_raw_vec(raw):
    return np.maximum(np.asarray(raw), 0)


def cordic_sinh_cosh(z: FxPValue, iterations: int = PIPELINE_STAGES) -> tuple[int, int]:
    """Gain-compensated (sinh, cosh) as raw integers at the internal scale.

    Zero input short-circuits to the exact pair (0, 1). Inputs beyond the
    schedule's convergence range are the caller's problem (range reduction
    lives in af_tanh / af_sigmoid) and raise here.
    """
    if z.raw == 0:
        return 0, _ONE
    z_int = int(_to_internal_vec(np.int64(z.raw), z.fmt.frac_bits))
    zmax = _tables(iterations)[2]
    if abs(z_int) > zmax:
        raise ConvergenceDomainError(
            f"|{z.value}| exceeds convergence bound {zmax / _ONE:.6f}"
        )
    arr = np.array([z_int], dtype=np.int64)
    y, x = _rotate_vec(arr, iterations)
    return int(_gain_comp_vec(y, iterations)[0]), int(_gain_comp_vec(x, iterations)[0])


def af_tanh(x: FxPValue) -> FxPValue:
    out = tanh_raw_vec(np.array([x.raw], dtype=np.int64), x.fmt.frac_bits, x.fmt.frac_bits)
    return FxPValue(int(out[0]), x.fmt)


def af_sigmoid(x: FxPValue) -> FxPValue:
    out = sigmoid_raw_vec(np.array([x.raw], dtype=np.int64), x.fmt.frac_bits, x.fmt.frac_bits)
    return FxPValue(int(out[0]), x.fmt)


def af_relu(x: FxPValue) -> FxPValue:
    return FxPValue(max(0, x.raw), x.fmt)


def apply(sel: AfSelect | int, x: FxPValue) -> FxPValue:
    """Dispatch on the 2-bit select; bit-identical to the direct call."""
    sel = AfSelect.from_code(int(sel))
    if sel is AfSelect.RELU:
        return af_relu(x)
    if sel is AfSelect.SIGMOID:
        return af_sigmoid(x)
    return af_tanh(x)


def piso_latency(n_outputs: int) -> int:
    """Shared-unit latency: 9-cycle pipeline fill, then one output per cycle.
    Zero outputs cost nothing."""
    if n_outputs < 0:
        raise DomainError(f"output count must be nonnegative, got {n_outputs}")
    if n_outputs == 0:
        return 0
    return PIPELINE_STAGES + n_outputs
