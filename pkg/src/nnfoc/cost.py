"""Deployability estimates: MACC, flash/RAM footprint, host latency.

MACC convention (itemized): one per weight multiply-accumulate, one per
element of a residual add, one per non-identity activation evaluation
(relu, tanh). Biases are folded into the accumulator initial value and
cost nothing; identity activations cost nothing.

Memory: weights take 4 bytes per parameter in float and 1 byte per
parameter in int8; the int8 format additionally stores per-tensor
metadata and widens biases to int32, which is reported as header bytes.
Activation RAM is the peak total size of live buffers when layers run
branch by branch, each buffer freed after its last consumer.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import kernels
from .quantize import QuantizedModel
from .tinyfc import Architecture, TinyFCModel

# Runtime-library footprints reported by the vendor toolchain for the
# original MCU deployment (KiB). Tabulated for report parity only; they
# are vendor-reported, not modeled.
VENDOR_LIB_FLASH_KIB = {"float": 15.0, "hpo": 15.0, "pruned": 20.0, "int8": 32.0}
VENDOR_LIB_RAM_KIB = {"float": 6.0, "hpo": 6.0, "pruned": 10.0, "int8": 13.0}

INT8_TENSOR_HEADER = 8  # float32 scale + int32 zero point


def _arch(model) -> Architecture:
    return model.arch


@dataclass(frozen=True)
class MaccBreakdown:
    weights: int
    residual_adds: int
    activations: int

    @property
    def total(self) -> int:
        return self.weights + self.residual_adds + self.activations


def macc_breakdown(model) -> MaccBreakdown:
    arch = _arch(model)
    w = r = a = 0
    for spec in arch.layers():
        w += spec.in_width * spec.out_width
        if spec.residual_from is not None:
            r += spec.out_width
        if spec.activation != "identity":
            a += spec.out_width
    return MaccBreakdown(w, r, a)


def count_macc(model) -> int:
    return macc_breakdown(model).total


def _buffers(arch: Architecture):
    """(width, producer step, last consumer step) for every activation buffer.

    Step 0 normalizes the input; branch layers follow in order; the merge
    runs last. A buffer with no consumer lives only at its producer step.
    """
    bufs = {"x": [arch.input_width, 0, 0]}
    step = 0
    finals = []
    for bi, branch in enumerate(arch.branches):
        prev = "x"
        for li, spec in enumerate(branch):
            step += 1
            name = (bi, li)
            bufs[name] = [spec.out_width, step, step]
            bufs[prev][2] = max(bufs[prev][2], step)
            if spec.residual_from is not None:
                src = (bi, spec.residual_from)
                bufs[src][2] = max(bufs[src][2], step)
            prev = name
        finals.append(prev)
    if arch.merge is not None:
        step += 1
        for f in finals:
            bufs[f][2] = max(bufs[f][2], step)
        bufs["out"] = [1, step, step]
    return list(bufs.values()), step


def peak_activation_elements(arch: Architecture) -> int:
    bufs, last = _buffers(arch)
    return max(sum(w for w, p, c in bufs if p <= s <= c) for s in range(last + 1))


def estimate_memory(model) -> tuple:
    """(weight_bytes, activation_bytes); see :func:`memory_detail` for headers."""
    d = memory_detail(model)
    return d["weight_bytes"], d["activation_bytes"]


def memory_detail(model) -> dict:
    arch = _arch(model)
    params = arch.param_count
    n_tensors = 2 * sum(1 for _ in arch.layers())
    if isinstance(model, QuantizedModel):
        n_bias = sum(l.out_width for l in arch.layers())
        return {
            "weight_bytes": params,
            "header_bytes": INT8_TENSOR_HEADER * (n_tensors // 2 + 1) + 3 * n_bias,
            "activation_bytes": peak_activation_elements(arch),
            "bytes_per_param": 1,
        }
    return {
        "weight_bytes": 4 * params,
        "header_bytes": 0,
        "activation_bytes": 4 * peak_activation_elements(arch),
        "bytes_per_param": 4,
    }


@dataclass(frozen=True)
class LatencyStats:
    n_runs: int
    inner_loops: int
    min_ns: float
    median_ns: float
    p99_ns: float
    macc: int

    @property
    def ns_per_macc(self) -> float:
        return self.median_ns / self.macc if self.macc else float("nan")


TIMER_FLOOR_NS = 20_000  # batch calls until one sample spans at least this long


def bench_latency(model, n_runs: int = 1000, x: Optional[np.ndarray] = None, warmup: int = 50) -> LatencyStats:
    """Per-inference wall time of the compiled single-sample kernel."""
    if n_runs < 100:
        raise ValueError("n_runs must be >= 100")
    prog = model.program()
    inp = np.ascontiguousarray(x if x is not None else np.array([0.5, 0.45, 1.0]), dtype=np.float64)
    run = kernels.run_program
    for _ in range(warmup):
        run(inp, prog.ints, prog.floats, prog.qints, prog.mode)
    inner = 1
    while True:
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            run(inp, prog.ints, prog.floats, prog.qints, prog.mode)
        if time.perf_counter_ns() - t0 >= TIMER_FLOOR_NS or inner >= 1 << 16:
            break
        inner *= 2
    samples = []
    for _ in range(n_runs):
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            run(inp, prog.ints, prog.floats, prog.qints, prog.mode)
        samples.append((time.perf_counter_ns() - t0) / inner)
    samples.sort()
    p99 = samples[min(len(samples) - 1, int(np.ceil(0.99 * len(samples))) - 1)]
    return LatencyStats(n_runs, inner, samples[0], statistics.median(samples), p99, count_macc(model))


@dataclass
class CostReport:
    name: str
    kind: str  # float | hpo | pruned | int8
    params: int
    macc: int
    macc_detail: dict
    weight_bytes: int
    header_bytes: int
    activation_bytes: int
    runtime_overhead_bytes: Optional[int]
    runtime_ram_bytes: Optional[int]
    latency: Optional[dict] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def cost_report(name: str, model, kind: str = "float", latency: Optional[LatencyStats] = None) -> CostReport:
    mem = memory_detail(model)
    b = macc_breakdown(model)
    lib_f = VENDOR_LIB_FLASH_KIB.get(kind)
    lib_r = VENDOR_LIB_RAM_KIB.get(kind)
    return CostReport(
        name,
        kind,
        model.arch.param_count,
        b.total,
        asdict(b),
        mem["weight_bytes"],
        mem["header_bytes"],
        mem["activation_bytes"],
        int(lib_f * 1024) if lib_f is not None else None,
        int(lib_r * 1024) if lib_r is not None else None,
        asdict(latency) if latency is not None else None,
    )


def render_table(reports) -> str:
    """Plain-text table: model, MACC, flash, RAM, host latency."""
    head = ("Model", "Params", "MACC", "FLASH (KiB)", "RAM (KiB)", "Host time (us)")
    rows = []
    for r in reports:
        lib_f = "n/a" if r.runtime_overhead_bytes is None else f"{r.runtime_overhead_bytes / 1024:g}*"
        lib_r = "n/a" if r.runtime_ram_bytes is None else f"{r.runtime_ram_bytes / 1024:g}*"
        lat = "-" if not r.latency else f"{r.latency['median_ns'] / 1000:.3f}"
        rows.append(
            (
                r.name,
                str(r.params),
                str(r.macc),
                f"Weights: {r.weight_bytes / 1024:.2f} Lib: {lib_f}",
                f"Act: {r.activation_bytes / 1024:.3f} Lib: {lib_r}",
                lat,
            )
        )
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(head)]
    line = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths))
    out = [line(head), "-+-".join("-" * w for w in widths)]
    out += [line(r) for r in rows]
    out.append("* vendor-reported runtime library footprint, not modeled")
    return "\n".join(out) + "\n"
