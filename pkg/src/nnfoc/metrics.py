"""Closed-loop quality metrics in per-unit speed.

Overshoot is measured per constant-reference segment. The first
``exclusion`` seconds after each transition are skipped; in the remainder,
overshoot is how far the speed goes past the reference in the direction it
was approaching from (``sign(ref - omega)`` at the segment start). Ramp
segments have no constant reference and contribute nothing.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .control import SimTrace
from .errors import DomainError
from .ground_truth import segment_bounds

EXCLUSION_WINDOW = 0.01


@dataclass(frozen=True)
class LoopMetrics:
    max_deviation: float
    avg_deviation: float
    max_overshoot: Optional[float]  # None when no segment qualifies

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def segment_overshoots(ref, w, sample_time: float, exclusion: float = EXCLUSION_WINDOW) -> list:
    """(start_step, overshoot) for every constant segment longer than the window."""
    skip = int(round(exclusion / sample_time))
    out = []
    for s, e in zip(*segment_bounds(ref)):
        if e - s <= skip or e - s < 2:
            continue
        direction = math.copysign(1.0, ref[s] - w[s]) if ref[s] != w[s] else 1.0
        tail = direction * (w[s + skip : e] - ref[s])
        out.append((int(s), max(0.0, float(tail.max()))))
    return out


def compute_metrics(trace: SimTrace, exclusion: float = EXCLUSION_WINDOW) -> LoopMetrics:
    if len(trace) == 0:
        raise DomainError("empty trace")
    ref = np.asarray(trace.omega_ref)
    w = np.asarray(trace.omega_meas)
    dev = np.abs(ref - w)
    ov = segment_overshoots(ref, w, trace.sample_time, exclusion)
    return LoopMetrics(
        max_deviation=float(dev.max()),
        avg_deviation=float(math.fsum(dev) / len(dev)),
        max_overshoot=max(o for _, o in ov) if ov else None,
    )


def relative_change(new: Optional[float], old: Optional[float]) -> Optional[float]:
    if new is None or old is None or old == 0:
        return None
    return (new - old) / old
