"""Cycle-accurate time-multiplexed execution on a 1D MAC array with one
shared activation unit.

Output neurons are tiled onto the array (one unit per output); tiles run
sequentially with tile completion chaining, and the layer's activations
stream through the shared CORDIC unit once per layer (default) or overlapped
per tile (config flag). Scheduling never touches numerics: simulate() scores
are the forward_quant scores.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from . import net as _net
from .errors import DomainError
from .naf import piso_latency
from .sharp import kernel_cycles

__all__ = [
    "ArrayConfig",
    "EventKind",
    "TraceEvent",
    "CycleTrace",
    "TileSchedule",
    "plan_layer",
    "plan_network",
    "simulate",
    "cpfi_analytic",
    "mac_cycles_total",
]


@dataclass(frozen=True)
class ArrayConfig:
    mac_units: int = 100
    naf_instances: int = 1
    f_clk: float = 100e6
    naf_overlap: bool = False   # activation of tile t may overlap MACs of t+1
    tile_load_cycles: int = 0   # optional per-tile weight/bias load cost

    def __post_init__(self):
        if self.mac_units < 1:
            raise DomainError("mac_units must be >= 1")
        if self.naf_instances < 1:
            raise DomainError("naf_instances must be >= 1")
        if self.f_clk <= 0:
            raise DomainError("f_clk must be positive")
        if self.tile_load_cycles < 0:
            raise DomainError("tile_load_cycles must be nonnegative")


class EventKind(Enum):
    COMPUTE_DONE = "ComputeDone"
    LAYER_DONE = "LayerDone"
    DNN_DONE = "DnnDone"


@dataclass(frozen=True)
class TraceEvent:
    cycle: int
    kind: EventKind
    layer: int
    tile: int


@dataclass(frozen=True)
class CycleTrace:
    events: tuple[TraceEvent, ...]

    @property
    def cpfi(self) -> int:
        return self.dnn_done.cycle

    @property
    def dnn_done(self) -> TraceEvent:
        done = [e for e in self.events if e.kind is EventKind.DNN_DONE]
        if len(done) != 1:
            raise DomainError(f"trace has {len(done)} DnnDone events")
        return done[0]

    def validate(self):
        done = self.dnn_done
        if done.cycle != max(e.cycle for e in self.events):
            raise DomainError("DnnDone is not stamped at the maximum cycle")
        layer_done = [e for e in self.events if e.kind is EventKind.LAYER_DONE]
        stamps = [e.cycle for e in sorted(layer_done, key=lambda e: e.layer)]
        if stamps != sorted(stamps):
            raise DomainError("LayerDone stamps decrease in layer order")

    def to_text(self) -> str:
        lines = [f"{e.cycle} {e.kind.value} {e.layer} {e.tile}" for e in self.events]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {
                "cpfi": self.cpfi,
                "events": [
                    {"cycle": e.cycle, "kind": e.kind.value,
                     "layer": e.layer, "tile": e.tile}
                    for e in self.events
                ],
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class TileSchedule:
    layer_index: int
    tile_sizes: tuple[int, ...]       # outputs mapped to the array per tile
    mac_cycles_per_tile: int          # all tile outputs run in parallel
    n_outputs: int


def _per_output_mac_cycles(layer) -> int:
    cycles = kernel_cycles(layer.window_operands(), layer.precision)
    if layer.kind == "conv2d":
        cycles *= layer.weights.shape[1]   # one window pass per input channel
    return cycles


def plan_layer(layer, cfg: ArrayConfig, n_outputs: int,
               layer_index: int = 0) -> TileSchedule:
    """Partition a layer's outputs into tiles of at most mac_units.

    Each unit computes one output's dot product; bias preload is free, so a
    tile costs the per-output MAC cycles (plus any configured load cost).
    """
    if n_outputs < 1:
        raise DomainError(f"layer {layer_index} has no outputs")
    sizes = []
    left = n_outputs
    while left > 0:
        take = min(cfg.mac_units, left)
        sizes.append(take)
        left -= take
    return TileSchedule(
        layer_index=layer_index,
        tile_sizes=tuple(sizes),
        mac_cycles_per_tile=_per_output_mac_cycles(layer) + cfg.tile_load_cycles,
        n_outputs=n_outputs,
    )


def plan_network(model, cfg: ArrayConfig) -> list[TileSchedule]:
    shapes = model.layer_shapes()
    plans = []
    for idx, layer in enumerate(model.layers):
        n_out = 1
        for d in shapes[idx]:
            n_out *= int(d)
        plans.append(plan_layer(layer, cfg, n_out, idx))
    return plans


def _network_timing(model, cfg: ArrayConfig):
    """Event list and total cycles; pure arithmetic over the tile plans."""
    events = []
    cycle = 0
    plans = plan_network(model, cfg)
    for plan in plans:
        if cfg.naf_overlap:
            mac_end = cycle
            naf_end = cycle
            for tile, size in enumerate(plan.tile_sizes):
                mac_end += plan.mac_cycles_per_tile
                events.append(TraceEvent(mac_end, EventKind.COMPUTE_DONE,
                                         plan.layer_index, tile))
                naf_end = max(mac_end, naf_end) + piso_latency(size)
            cycle = naf_end
        else:
            for tile, size in enumerate(plan.tile_sizes):
                cycle += plan.mac_cycles_per_tile
                events.append(TraceEvent(cycle, EventKind.COMPUTE_DONE,
                                         plan.layer_index, tile))
            cycle += piso_latency(plan.n_outputs)
        events.append(TraceEvent(cycle, EventKind.LAYER_DONE, plan.layer_index,
                                 len(plan.tile_sizes) - 1))
    events.append(TraceEvent(cycle, EventKind.DNN_DONE, len(model.layers) - 1,
                             len(plans[-1].tile_sizes) - 1))
    return tuple(events), cycle


def simulate(model, x, cfg: ArrayConfig):
    """Run one input through the array model: bit-identical scores from the
    quantized forward path plus the completion-event trace."""
    scores = _net.forward_quant(model, x)
    events, _ = _network_timing(model, cfg)
    trace = CycleTrace(events)
    trace.validate()
    return scores, trace


def cpfi_analytic(model, cfg: ArrayConfig) -> int:
    """Closed-form cycles per frame; equals the simulated trace's stamp."""
    _, total = _network_timing(model, cfg)
    return total


def mac_cycles_total(model, cfg: ArrayConfig) -> int:
    """MAC-phase cycle component only (no activation-unit latency)."""
    return sum(
        plan.mac_cycles_per_tile * len(plan.tile_sizes)
        for plan in plan_network(model, cfg)
    )
