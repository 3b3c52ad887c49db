"""Experiment orchestration: single runs, trace files, overhead accounting.

A run wires one workload through one condition:

* ``Baseline``       -- machine flat out: max DVFS, no idle, no balloon.
* ``NoisyBaseline``  -- one random DVFS + idle level drawn per run and held,
  the classic "hide in OS noise" non-defense.
* ``Maya*``          -- closed loop: mask target -> controller -> quantized
  actuators -> plant, one step per sample period.

Traces persist as delimited text, one file per run, with a fixed one-line
header.  Write -> read -> write is byte-identical; that property is what the
campaign manifest hashes rely on.

Workload progress is decoupled from wall time: each sample advances the
program counter by a service rate in [0, 1] that shrinks when the actuators
throttle the machine, so a defended run takes more samples to finish the same
work.  Demand is evaluated at the (stretched) progress index, which is what
moves completion time and mean power apart across conditions.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .controller import ControllerDivergence, control_step, init_controller
from .mask import next_target
from .plant import (ActuatorSetting, init_plant, load_profile, profile_hash,
                    quantize_setting, step_plant)
from .workloads import demand_at

TRACE_FORMAT = "maya-trace v1"

BASELINE = "Baseline"
NOISY_BASELINE = "NoisyBaseline"

# Shaped condition -> mask family driving its target sequence.
MASK_FAMILY = {
    "MayaConstant": "Constant",
    "MayaUniform": "UniformRandom",
    "MayaGaussian": "Gaussian",
    "MayaSinusoid": "Sinusoid",
    "MayaGaussianSinusoid": "GaussianSinusoid",
}

CONDITIONS = (BASELINE, NOISY_BASELINE) + tuple(MASK_FAMILY)

# Fraction of a nominal sample's work the balloon steals when at 100%.
BALLOON_INTERFERENCE = 0.5

# Demand presented after the workload's total duration has been serviced;
# a finished program leaves a small background residue, not a dead machine.
DRAIN_DEMAND_W = 2.0


@dataclass
class PowerTrace:
    """One run's per-sample record plus its header identity."""

    profile_hash: str
    seed: int
    period_ms: int
    condition: str
    app_id: int
    run_id: int
    t: np.ndarray            # sample index, 0..n-1
    target_w: np.ndarray     # NaN where the condition has no mask
    measured_w: np.ndarray
    dvfs_ghz: np.ndarray
    idle_pct: np.ndarray
    balloon_pct: np.ndarray

    def __len__(self) -> int:
        return self.t.size


def is_shaped(condition: str) -> bool:
    return condition in MASK_FAMILY


def service_rate(setting: ActuatorSetting, profile) -> float:
    """Work serviced per sample under this setting, 1.0 at full tilt."""
    return ((setting.dvfs_ghz / profile.dvfs_grid[-1])
            * (1.0 - setting.idle_pct / 100.0)
            * (1.0 - BALLOON_INTERFERENCE * setting.balloon_pct / 100.0))


def run_once(workload, condition, profile, ctrl=None, mask=None, seed=0,
             length=None, run_id=0) -> PowerTrace:
    """Simulate one run and return its trace.

    ``ctrl`` and ``mask`` must both be given for shaped conditions and are
    ignored otherwise.  ``length`` defaults to the workload's nominal
    duration; pass more to let throttled runs reach completion.

    If the controller state goes non-finite the run aborts with
    :class:`ControllerDivergence`; the samples produced so far are attached
    to the exception as ``partial_trace`` for diagnosis.
    """
    profile = load_profile(profile)
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    shaped = condition in MASK_FAMILY
    if shaped and (ctrl is None or mask is None):
        raise ValueError(f"{condition} requires both ctrl and mask")

    # Fixed spawn count keeps the plant/demand streams identical across
    # conditions for one seed, which makes A/B debugging sane.
    plant_ss, demand_ss, setting_ss = np.random.SeedSequence(seed).spawn(3)
    plant = init_plant(profile, plant_ss)
    demand_rng = np.random.default_rng(demand_ss)

    duration = workload.total_duration
    n = duration if length is None else int(length)
    if n <= 0:
        raise ValueError(f"trace length must be positive, got {n}")

    if condition == BASELINE:
        fixed = profile.max_setting()
    elif condition == NOISY_BASELINE:
        rng = np.random.default_rng(setting_ss)
        # OS-level noise: any governor frequency, but only mild background
        # idle. Deep idle injection is a defense actuator, not ambient noise.
        mild_idle = [v for v in profile.idle_grid
                     if v <= profile.idle_grid[-1] / 2]
        fixed = ActuatorSetting(
            dvfs_ghz=float(rng.choice(profile.dvfs_grid)),
            idle_pct=float(rng.choice(mild_idle)),
            balloon_pct=0.0,
        )
    else:
        cstate = init_controller(ctrl)

    target = np.full(n, np.nan)
    measured = np.empty(n)
    dvfs = np.empty(n)
    idle = np.empty(n)
    balloon = np.empty(n)

    def build(upto: int) -> PowerTrace:
        return PowerTrace(
            profile_hash=profile_hash(profile), seed=int(seed),
            period_ms=profile.sample_period_ms, condition=condition,
            app_id=workload.app_id, run_id=int(run_id),
            t=np.arange(upto), target_w=target[:upto],
            measured_w=measured[:upto], dvfs_ghz=dvfs[:upto],
            idle_pct=idle[:upto], balloon_pct=balloon[:upto])

    progress = 0.0
    tdp = profile.tdp_w
    # No sensor reading exists before the first step; the controller sees
    # the idle floor, which is where the plant filter starts too.
    prev = profile.base_idle_w
    for t in range(n):
        if shaped:
            goal = next_target(mask, t)
            try:
                cmd = control_step(ctrl, cstate, goal, prev)
            except ControllerDivergence as exc:
                err = ControllerDivergence(
                    f"{condition} run of app {workload.app_id} aborted at "
                    f"sample {t}/{n}: {exc}")
                err.partial_trace = build(t)
                raise err from exc
            setting = quantize_setting(
                ActuatorSetting(cmd[0], cmd[1], cmd[2]), profile)
            target[t] = goal
        else:
            setting = fixed
        if progress < duration:
            demand = demand_at(workload, progress, demand_rng, max_demand=tdp)
        else:
            demand = DRAIN_DEMAND_W
        prev = step_plant(plant, setting, demand, profile)
        measured[t] = prev
        dvfs[t] = setting.dvfs_ghz
        idle[t] = setting.idle_pct
        balloon[t] = setting.balloon_pct
        progress += service_rate(setting, profile)
    return build(n)


def _served_curve(trace: PowerTrace, profile) -> np.ndarray:
    profile = load_profile(profile)
    rates = ((trace.dvfs_ghz / profile.dvfs_grid[-1])
             * (1.0 - trace.idle_pct / 100.0)
             * (1.0 - BALLOON_INTERFERENCE * trace.balloon_pct / 100.0))
    return np.cumsum(rates)


def completion_sample(trace: PowerTrace, workload, profile):
    """Samples needed to service the workload's total demand, else None."""
    served = _served_curve(trace, profile)
    done = np.nonzero(served >= workload.total_duration - 1e-9)[0]
    if done.size == 0:
        return None
    return int(done[0]) + 1


def phase_boundary_samples(trace: PowerTrace, workload, profile) -> list:
    """Trace samples where the run crosses into each later phase.

    Boundaries live in progress units; under throttling they land later in
    wall-clock time than the workload spec says. This maps them through the
    trace's own service curve, so it is the ground truth a change-point
    detector on this trace should be compared against. Boundaries the trace
    never reached are omitted.
    """
    served = _served_curve(trace, profile)
    out = []
    edge = 0.0
    for phase in workload.phases[:-1]:
        edge += phase.duration
        hit = np.nonzero(served >= edge - 1e-9)[0]
        if hit.size == 0:
            break
        out.append(int(hit[0]) + 1)
    return out


# ---------------------------------------------------------------------------
# Overhead accounting


@dataclass(frozen=True)
class OverheadReport:
    """Power and completion-time ratios of each condition against Baseline.

    ``power_ratio`` and ``completion_ratio`` map condition -> mean ratio
    across apps; ``per_app`` keeps the per-app breakdown.  ``incomplete``
    counts traces too short to reach completion (excluded from the
    completion ratios but still contributing power).
    """

    power_ratio: dict
    completion_ratio: dict
    per_app: dict
    incomplete: int

    def to_dict(self) -> dict:
        return {
            "power_ratio": dict(self.power_ratio),
            "completion_ratio": dict(self.completion_ratio),
            "per_app": {c: {str(a): dict(v) for a, v in apps.items()}
                        for c, apps in self.per_app.items()},
            "incomplete": self.incomplete,
        }


def overhead_report(traces, workloads, profile) -> OverheadReport:
    """Aggregate traces into an OverheadReport.

    ``traces`` is any iterable of PowerTrace; ``workloads`` maps app_id to
    its WorkloadSpec (needed for completion).  Baseline traces must be
    present for every app that appears, since every ratio is against the
    per-app Baseline mean.
    """
    profile = load_profile(profile)
    by_cond_app: dict = {}
    for tr in traces:
        by_cond_app.setdefault(tr.condition, {}).setdefault(
            tr.app_id, []).append(tr)
    if BASELINE not in by_cond_app:
        raise ValueError("no Baseline traces; ratios are against Baseline")
    apps_seen = {a for apps in by_cond_app.values() for a in apps}
    missing = sorted(apps_seen - set(by_cond_app[BASELINE]))
    if missing:
        raise ValueError(f"no Baseline traces for apps {missing}")

    def stats(runs, app_id):
        comps = [completion_sample(tr, workloads[app_id], profile)
                 for tr in runs]
        # Power is averaged while the workload is executing. Past completion
        # a trace only shows post-run drain, whose length depends on how much
        # slack the caller left, not on the condition's cost.
        power = float(np.mean([
            tr.measured_w[:c].mean() if c is not None
            else tr.measured_w.mean()
            for tr, c in zip(runs, comps)]))
        done = [c for c in comps if c is not None]
        comp = float(np.mean(done)) if done else math.nan
        return power, comp, len(comps) - len(done)

    base = {a: stats(runs, a) for a, runs in by_cond_app[BASELINE].items()}
    power_ratio, completion_ratio, per_app = {}, {}, {}
    incomplete = 0
    for cond, apps in sorted(by_cond_app.items()):
        p_ratios, c_ratios, detail = [], [], {}
        for app_id, runs in sorted(apps.items()):
            power, comp, n_missing = stats(runs, app_id)
            incomplete += n_missing
            b_power, b_comp, _ = base[app_id]
            pr = power / b_power
            cr = comp / b_comp
            p_ratios.append(pr)
            detail[app_id] = {"power": pr, "completion": cr}
            if not math.isnan(cr):
                c_ratios.append(cr)
        power_ratio[cond] = float(np.mean(p_ratios))
        completion_ratio[cond] = (float(np.mean(c_ratios)) if c_ratios
                                  else math.nan)
        per_app[cond] = detail
    return OverheadReport(power_ratio=power_ratio,
                          completion_ratio=completion_ratio,
                          per_app=per_app, incomplete=incomplete)


# ---------------------------------------------------------------------------
# Trace persistence

_HEADER_RE = re.compile(
    r"^# maya-trace v1; profile=([0-9a-f]{16}); seed=(\d+); period_ms=(\d+)$")


def save_trace(trace: PowerTrace, path) -> None:
    """Write one trace file; see load_trace for the exact format."""
    rows = [f"# {TRACE_FORMAT}; profile={trace.profile_hash}; "
            f"seed={trace.seed}; period_ms={trace.period_ms}\n"]
    suffix = f",{trace.app_id},{trace.run_id},{trace.condition}\n"
    for i in range(trace.t.size):
        tw = trace.target_w[i]
        rows.append(
            f"{trace.t[i]},{'' if math.isnan(tw) else format(tw, '.4f')},"
            f"{trace.measured_w[i]:.4f},{trace.dvfs_ghz[i]:.4f},"
            f"{trace.idle_pct[i]:.4f},{trace.balloon_pct[i]:.4f}{suffix}")
    with open(path, "w", newline="") as fh:
        fh.write("".join(rows))


def load_trace(path) -> PowerTrace:
    """Read a trace file written by save_trace.

    Format: one header line
    ``# maya-trace v1; profile=<hash>; seed=<u64>; period_ms=<int>``
    then one record per line,
    ``t,target_w,measured_w,dvfs_ghz,idle_pct,balloon_pct,app_id,run_id,condition``
    with floats at 4 decimals and target_w empty for unshaped conditions.
    """
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty trace file")
    head = _HEADER_RE.match(lines[0])
    if head is None:
        raise ValueError(f"{path}: not a {TRACE_FORMAT} file")
    cols = ([], [], [], [], [], [])
    app_ids, run_ids, conds = set(), set(), set()
    for ln, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 9:
            raise ValueError(f"{path}:{ln}: expected 9 fields, "
                             f"got {len(parts)}")
        cols[0].append(int(parts[0]))
        cols[1].append(math.nan if parts[1] == "" else float(parts[1]))
        for k in range(2, 6):
            cols[k].append(float(parts[k]))
        app_ids.add(int(parts[6]))
        run_ids.add(int(parts[7]))
        conds.add(parts[8])
    for name, vals in (("app_id", app_ids), ("run_id", run_ids),
                       ("condition", conds)):
        if len(vals) != 1:
            raise ValueError(f"{path}: mixed {name} values {sorted(vals)}")
    t = np.asarray(cols[0])
    if t.size and (t[0] != 0 or np.any(np.diff(t) != 1)):
        raise ValueError(f"{path}: sample index is not 0,1,2,...")
    return PowerTrace(
        profile_hash=head.group(1), seed=int(head.group(2)),
        period_ms=int(head.group(3)), condition=conds.pop(),
        app_id=app_ids.pop(), run_id=run_ids.pop(), t=t,
        target_w=np.asarray(cols[1]), measured_w=np.asarray(cols[2]),
        dvfs_ghz=np.asarray(cols[3]), idle_pct=np.asarray(cols[4]),
        balloon_pct=np.asarray(cols[5]))
