"""Reference-speed profiles (per-unit of max speed).

Both stress-test generators draw their targets from :data:`AMPLITUDES` with
``random.Random(seed)`` (Mersenne Twister); its integer-seeded stream is
stable across platforms and Python versions, which makes profiles
reproducible bit-for-bit.
"""

from __future__ import annotations

import bisect
import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError

AMPLITUDES = (0.2, 0.35, 0.5, 0.65, 0.8)
CASE_DURATION = 10.0
KINDS = ("step", "ramp")


@dataclass(frozen=True)
class Segment:
    start: float
    kind: str
    target: float


@dataclass(frozen=True)
class ReferenceProfile:
    """Piecewise reference: a step jumps to ``target`` at ``start``; a ramp
    moves linearly from the previous target to ``target`` over its segment.
    The value before the first segment is 0 (motor at rest)."""

    segments: tuple
    duration: float

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise DomainError("profile needs at least one segment")
        if segs[0].start != 0.0:
            raise DomainError("first segment must start at t=0")
        for a, b in zip(segs, segs[1:]):
            if not b.start > a.start:
                raise DomainError("segment start times must be strictly increasing")
        for s in segs:
            if s.kind not in KINDS:
                raise DomainError(f"unknown segment kind {s.kind!r}")
            if not -1.0 <= s.target <= 1.0:
                raise DomainError(f"target {s.target} outside [-1, 1] per-unit")
        if not self.duration > segs[-1].start:
            raise DomainError("duration must exceed the last segment start")

    @property
    def starts(self) -> list:
        return [s.start for s in self.segments]

    def transition_count(self) -> int:
        """Every segment start is a transition, including the first one out of rest."""
        return len(self.segments)

    def _segment_end(self, i: int) -> float:
        return self.segments[i + 1].start if i + 1 < len(self.segments) else self.duration

    def _previous_target(self, i: int) -> float:
        return self.segments[i - 1].target if i > 0 else 0.0

    def _value(self, i: int, t: float) -> float:
        seg = self.segments[i]
        if seg.kind == "step":
            return seg.target
        t0, t1 = seg.start, self._segment_end(i)
        frac = (t - t0) / (t1 - t0)
        a = self._previous_target(i)
        return a + (seg.target - a) * frac

    def eval(self, t: float) -> float:
        if not (0.0 <= t <= self.duration) or math.isnan(t):
            raise DomainError(f"t={t} outside [0, {self.duration}]")
        i = bisect.bisect_right(self.starts, t) - 1
        return self._value(i, t)

    def n_steps(self, dt: float) -> int:
        return int(round(self.duration / dt)) + 1

    def sample(self, dt: float) -> np.ndarray:
        """Values at t_k = k*dt for k = 0..n_steps-1.

        Segment boundaries are resolved on the integer step grid
        (``round(start/dt)``) so float error in ``k*dt`` never shifts a
        transition by one sample.
        """
        n = self.n_steps(dt)
        k = np.arange(n)
        out = np.empty(n)
        bounds = [int(round(s.start / dt)) for s in self.segments] + [n]
        for i, seg in enumerate(self.segments):
            lo, hi = bounds[i], bounds[i + 1]
            if seg.kind == "step":
                out[lo:hi] = seg.target
            else:
                t0, t1 = seg.start, self._segment_end(i)
                a = self._previous_target(i)
                out[lo:hi] = a + (seg.target - a) * ((k[lo:hi] * dt - t0) / (t1 - t0))
        return out

    def to_json(self) -> dict:
        return {
            "duration": self.duration,
            "segments": [{"start": s.start, "kind": s.kind, "target": s.target} for s in self.segments],
        }

    @classmethod
    def from_json(cls, doc, duration: float | None = None) -> "ReferenceProfile":
        if isinstance(doc, list):
            segments = doc
            if duration is None:
                raise DomainError("a bare segment list needs an explicit duration")
        else:
            segments = doc["segments"]
            duration = doc.get("duration", duration)
        segs = [Segment(float(s["start"]), str(s["kind"]), float(s["target"])) for s in segments]
        return cls(tuple(segs), float(duration))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "ReferenceProfile":
        return cls.from_json(json.loads(Path(path).read_text()))


def _draw_targets(rng: random.Random, n: int) -> list:
    targets, prev = [], None
    for _ in range(n):
        a = rng.choice([x for x in AMPLITUDES if x != prev])
        targets.append(a)
        prev = a
    return targets


def case1_profile(seed: int) -> ReferenceProfile:
    """10 s of steps, two transitions per second (one every 0.5 s)."""
    rng = random.Random(seed)
    targets = _draw_targets(rng, 20)
    segs = tuple(Segment(0.5 * i, "step", a) for i, a in enumerate(targets))
    return ReferenceProfile(segs, CASE_DURATION)


def case2_profile(seed: int) -> ReferenceProfile:
    """10 s mixing steps and ramps, ten transitions per second.

    Each 0.1 s segment is a step or (with probability 1/2) a ramp spanning
    the whole segment, so ramp slopes are at most 0.6 pu / 0.1 s = 6 pu/s.
    The first segment is always a step out of rest.
    """
    rng = random.Random(seed)
    targets = _draw_targets(rng, 100)
    segs = []
    for i, a in enumerate(targets):
        kind = "step" if i == 0 or rng.random() < 0.5 else "ramp"
        segs.append(Segment(round(0.1 * i, 10), kind, a))
    return ReferenceProfile(tuple(segs), CASE_DURATION)


def constant_profile(value: float, duration: float) -> ReferenceProfile:
    return ReferenceProfile((Segment(0.0, "step", value),), duration)


def profile_from_spec(kind: str, seed: int | None = None, path=None) -> ReferenceProfile:
    if path is not None:
        return ReferenceProfile.load(path)
    if seed is None:
        raise DomainError("generated profiles need an explicit seed")
    if kind == "case1":
        return case1_profile(seed)
    if kind == "case2":
        return case2_profile(seed)
    raise DomainError(f"unknown profile kind {kind!r}")
