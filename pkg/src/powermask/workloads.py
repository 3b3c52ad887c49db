"""Synthetic workload suite.

A workload is a sequence of phases; each phase has a mean compute demand in
watts, optional periodic "loop" activity (sinusoidal, period in samples),
and Gaussian jitter. Demand is what the plant's active logic would draw at
the reference (maximum) DVFS level with no idle injection.

The built-in suite has 8 batch apps and 3 video-playback workloads. They are
constructed to be tellable apart: overall means at least 2 W apart or
dominant loop periods at least 10 samples apart, pairwise. Loop amplitudes
dominate phase-mean contrast so each app's strongest non-DC spectral line
sits at its longest loop period.
"""

from __future__ import annotations

import bisect
import functools
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PhaseSpec:
    mean_demand: float
    demand_sigma: float
    loop_period: float | None
    loop_amp: float
    duration: int


@dataclass(frozen=True)
class WorkloadSpec:
    app_id: int
    phases: tuple

    @functools.cached_property
    def total_duration(self) -> int:
        # Cached: the harness asks once per sample in its hot loop.
        return sum(p.duration for p in self.phases)

    def boundaries(self) -> list[int]:
        """Sample indices where a new phase starts (excluding t=0)."""
        acc, out = 0, []
        for p in self.phases[:-1]:
            acc += p.duration
            out.append(acc)
        return out

    def phase_at(self, t: int) -> PhaseSpec:
        edges = _phase_edges(self)
        return self.phases[bisect.bisect_right(edges, t) - 1]


_EDGE_CACHE: dict[int, list[int]] = {}


def _phase_edges(spec: WorkloadSpec) -> list[int]:
    key = id(spec)
    edges = _EDGE_CACHE.get(key)
    if edges is None:
        edges = [0]
        for p in spec.phases[:-1]:
            edges.append(edges[-1] + p.duration)
        _EDGE_CACHE[key] = edges
    return edges


def demand_at(spec: WorkloadSpec, t: int, rng: np.random.Generator,
              max_demand: float = math.inf) -> float:
    """Demand sample at progress index t, in watts.

    The loop term uses the global index so a loop that spans several phases
    stays phase-coherent. One Gaussian draw is consumed per call regardless
    of sigma, keeping parallel streams aligned.
    """
    if not 0 <= t < spec.total_duration:
        raise ValueError(f"t={t} outside workload duration "
                         f"[0, {spec.total_duration})")
    phase = spec.phase_at(t)
    value = phase.mean_demand
    if phase.loop_period:
        value += phase.loop_amp * math.sin(2.0 * math.pi * t / phase.loop_period)
    value += rng.normal(0.0, phase.demand_sigma)
    return min(max(value, 0.0), max_demand)


def noise_free_demand(spec: WorkloadSpec) -> np.ndarray:
    """Full deterministic demand signal (sigma suppressed)."""
    t = np.arange(spec.total_duration)
    out = np.empty(spec.total_duration)
    start = 0
    for p in spec.phases:
        seg = t[start:start + p.duration]
        vals = np.full(p.duration, p.mean_demand)
        if p.loop_period:
            vals = vals + p.loop_amp * np.sin(2.0 * np.pi * seg / p.loop_period)
        out[start:start + p.duration] = vals
        start += p.duration
    return out


def validate_workload(spec: WorkloadSpec, tdp_w: float) -> None:
    for i, p in enumerate(spec.phases):
        if not 100 <= p.duration <= 1500:
            raise ValueError(f"phase {i} duration {p.duration} outside [100, 1500]")
        if p.mean_demand - p.loop_amp < 0 or p.mean_demand + p.loop_amp > tdp_w:
            raise ValueError(f"phase {i} demand range outside [0, {tdp_w}]")


def longest_loop_period(spec: WorkloadSpec) -> float | None:
    periods = [p.loop_period for p in spec.phases if p.loop_period]
    return max(periods) if periods else None


def overall_mean(spec: WorkloadSpec) -> float:
    return sum(p.mean_demand * p.duration for p in spec.phases) / spec.total_duration


def repeated(spec: WorkloadSpec, times: int) -> WorkloadSpec:
    """Same phase cycle tiled ``times`` over, like an iterative app.

    Long-observation studies (signal averaging, spectra) need runs that stay
    busy for the whole capture window. Tiling keeps each phase at its
    original length, so phase-scale structure is preserved rather than
    stretched into long homogeneous regimes.
    """
    if times < 1:
        raise ValueError("times must be a positive integer")
    return WorkloadSpec(app_id=spec.app_id, phases=spec.phases * int(times))


def _three_phase(app_id, level, sigma, period, amp, d1, d2, d3, dip=5.0):
    return WorkloadSpec(app_id=app_id, phases=(
        PhaseSpec(level, sigma, period, amp, d1),
        PhaseSpec(level - dip, sigma * 0.7, None, 0.0, d2),
        PhaseSpec(level, sigma, period, amp, d3),
    ))


def builtin_suite() -> tuple[list[WorkloadSpec], list[WorkloadSpec]]:
    """The shipped workloads: (8 batch apps, 3 videos), ids 0..7 and 8..10.

    All specs share a 2000-sample nominal duration so cross-app statistics
    compare traces of equal length.  Loop periods sit at 10-24 samples
    (0.2-0.5 s wall time), the compute/wait alternation scale of real
    programs, fast enough that a power-shaping loop cannot fully absorb
    them.
    """
    apps = [
        # First-phase durations end just past a loop crest (d1 = 4 mod 10)
        # so the drop into the quiet phase is a cliff, not a trough blending
        # into it.
        _three_phase(0, 26.0, 1.2, 10.0, 10.0, 904, 296, 800),
        _three_phase(1, 31.0, 1.5, 12.0, 11.0, 1000, 250, 750),
        _three_phase(2, 36.0, 1.8, 14.0, 12.0, 1100, 300, 600),
        _three_phase(3, 41.0, 2.0, 16.0, 12.0, 1200, 300, 500),
        _three_phase(4, 46.0, 2.2, 18.0, 13.0, 1300, 200, 500),
        _three_phase(5, 51.0, 2.4, 20.0, 13.0, 1400, 200, 400),
        _three_phase(6, 56.0, 2.6, 22.0, 14.0, 1440, 240, 320),
        _three_phase(7, 61.0, 2.8, 24.0, 14.0, 1500, 200, 300),
    ]
    # Videos are a frame loop with one mid-stream scene change. For 9 and 10
    # the loop period divides evenly into round cut points, which would put
    # the scene change at a zero crossing where a small mean step hides in
    # the loop's own slope; their cuts sit just past a crest instead and the
    # new scene also runs flatter (smaller loop amplitude), so the change is
    # an actual cliff in the demand signal.
    videos = [
        WorkloadSpec(8, (PhaseSpec(34.0, 2.5, 11.0, 9.0, 1500),
                         PhaseSpec(30.5, 2.5, 11.0, 9.0, 500))),
        WorkloadSpec(9, (PhaseSpec(44.0, 2.5, 15.0, 10.0, 1489),
                         PhaseSpec(40.5, 2.5, 15.0, 3.0, 511))),
        WorkloadSpec(10, (PhaseSpec(54.0, 2.5, 19.0, 11.0, 1487),
                          PhaseSpec(50.5, 2.5, 19.0, 3.0, 513))),
    ]
    return apps, videos


def suite_by_id() -> dict[int, WorkloadSpec]:
    apps, videos = builtin_suite()
    return {w.app_id: w for w in apps + videos}
