"""Structured hardware-aware reductive pruning.

Retention counts are derived from the kernel window size so that every
surviving window fills the four SIMD lanes exactly; masks are magnitude
based, deterministic, and frozen before fine-tuning. Layer precision is
assigned greedily, reverting any layer whose 4-bit accuracy drop exceeds the
budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, KernelTooSmall
from .mac import MacMode

__all__ = [
    "SparsityMask",
    "PrecisionAssignment",
    "retained_count",
    "prune_kernel",
    "prune_conv_weights",
    "prune_model",
    "assign_precision",
    "fine_tune",
    "kernel_cycles",
]

SIMD_LANES = 4


@dataclass(frozen=True)
class SparsityMask:
    """Boolean retention flags plus the exact per-window retained count."""

    flags: np.ndarray
    retained_per_window: int

    def __post_init__(self):
        flags = np.ascontiguousarray(self.flags, dtype=bool)
        flags.setflags(write=False)  # masks are frozen once built
        object.__setattr__(self, "flags", flags)

    @property
    def total_retained(self) -> int:
        return int(self.flags.sum())


@dataclass(frozen=True)
class PrecisionAssignment:
    """One MAC mode per layer plus the accuracy budget that produced it."""

    modes: tuple[MacMode, ...]
    epsilon: float


def retained_count(k_h: int, k_w: int) -> int:
    """Weights kept per kernel window: 4 * floor(N/8), always a multiple of
    the SIMD width. Windows below 8 positions would retain nothing."""
    n = k_h * k_w
    if n < 8:
        raise KernelTooSmall(f"{k_h}x{k_w} window has {n} < 8 positions")
    return 4 * (n // 8)


def prune_kernel(window, r: int) -> SparsityMask:
    """Magnitude mask over one kernel window: flags the r largest |w|,
    breaking ties toward the lowest linear index."""
    w = np.asarray(window, dtype=np.float64)
    if r > w.size:
        raise DomainError(f"cannot retain {r} of {w.size} weights")
    order = np.argsort(-np.abs(w).ravel(), kind="stable")
    flags = np.zeros(w.size, dtype=bool)
    flags[order[:r]] = True
    return SparsityMask(flags.reshape(w.shape), r)


def prune_conv_weights(weights: np.ndarray) -> SparsityMask:
    """Per-window mask for a (out, in, k_h, k_w) tensor. Windows smaller than
    the retention rule allows (e.g. 1x1) are left dense."""
    out_ch, in_ch, k_h, k_w = weights.shape
    if k_h * k_w < 8:
        return SparsityMask(np.ones_like(weights, dtype=bool), k_h * k_w)
    r = retained_count(k_h, k_w)
    flags = np.zeros_like(weights, dtype=bool)
    for o in range(out_ch):
        for c in range(in_ch):
            flags[o, c] = prune_kernel(weights[o, c], r).flags
    return SparsityMask(flags, r)


def prune_model(model):
    """Attach SHARP masks to every conv layer and zero the pruned weights."""
    pruned = model.copy()
    for layer in pruned.layers:
        if layer.kind != "conv2d":
            continue
        mask = prune_conv_weights(layer.weights)
        layer.mask = mask
        layer.weights = layer.weights * mask.flags
        layer.refresh_mn_scale()
    return pruned


def assign_precision(model, evaluate, epsilon: float) -> PrecisionAssignment:
    """Greedy front-to-back 4-bit assignment.

    Each layer is tried at 4-bit against the running mixed assignment; if the
    absolute accuracy drop exceeds epsilon the layer reverts to 8-bit. Layers
    are visited exactly once, so the result is deterministic for a
    deterministic evaluate function.
    """
    current = model.copy()
    for i in range(len(current.layers)):
        current.layers[i].precision = MacMode.FXP8
        current.layers[i].refresh_mn_scale()
    acc_running = evaluate(current)
    for i in range(len(current.layers)):
        trial = current.copy()
        trial.layers[i].precision = MacMode.FXP4_SIMD
        trial.layers[i].refresh_mn_scale()
        acc_trial = evaluate(trial)
        if acc_running - acc_trial > epsilon:
            continue  # revert: keep 8-bit
        current = trial
        acc_running = acc_trial
    return PrecisionAssignment(tuple(l.precision for l in current.layers), epsilon)


def apply_assignment(model, assignment: PrecisionAssignment):
    out = model.copy()
    if len(assignment.modes) != len(out.layers):
        raise DomainError(
            f"{len(assignment.modes)} modes for {len(out.layers)} layers"
        )
    for layer, mode in zip(out.layers, assignment.modes):
        layer.precision = mode
        layer.refresh_mn_scale()
    return out


def fine_tune(model, masks, assignment, dataset, epochs: int, lr: float, seed: int = 0):
    """Quantization-aware fine-tuning with straight-through gradients.

    The forward pass is the bit-accurate quantized path at the assigned
    per-layer precision; gradients flow straight through the quantizers and
    update only retained weights, so the mask and the assignment survive
    unchanged. epochs=0 returns the prepared model untouched.
    """
    from . import net as _net  # deferred: net depends on this module's types

    work = apply_assignment(model, assignment)
    if len(masks) != len(work.layers):
        raise DomainError(f"{len(masks)} masks for {len(work.layers)} layers")
    for layer, mask in zip(work.layers, masks):
        if mask is None:
            continue
        layer.mask = mask
        layer.weights = layer.weights * mask.flags
        layer.refresh_mn_scale()
    if epochs > 0:
        _net.qat_finetune(work, dataset, epochs=epochs, lr=lr, seed=seed)
    return work


def kernel_cycles(k_retained: int, mode: MacMode) -> int:
    """Execution cycles for one kernel window: ceil(retained / lanes)."""
    if k_retained < 1:
        raise DomainError(f"operand count must be >= 1, got {k_retained}")
    return -(-k_retained // mode.lanes)
