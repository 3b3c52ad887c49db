"""Simulated desktop power plant.

Models the pieces of a desktop machine that matter for closed-loop power
shaping:

* three actuators on discrete grids: DVFS frequency (GHz), idle-cycle
  injection (%), and a power-balloon task (%),
* a static power map: idle floor plus a per-DVFS-level scale applied to
  compute activity and balloon draw,
* first-order thermal low-pass lag,
* additive Gaussian sensor noise, clamped to [0, tdp] and rounded to the
  sensor resolution.

Power model, before noise and rounding::

    raw(T) = base_idle + scale(dvfs) * (demand * (1 - idle/100) + balloon(pct))
    filt(T) = filt(T-1) + alpha * (raw(T) - filt(T-1))

``raw`` is monotone increasing in dvfs and balloon and decreasing in idle,
so a feedback controller always has a usable direction of authority.
"""

from __future__ import annotations

import bisect
import functools
import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

# Low-pass settles to <1% of a step within this many samples
# (0.55 ** 8 ~= 0.008 for the default alpha below).
LOWPASS_SETTLE_SAMPLES = 8

_GRID_TIE_EPS = 1e-9


@dataclass(frozen=True)
class MachineProfile:
    """Static description of one machine: grids, limits, sensor model."""

    tdp_w: float = 95.0
    dvfs_grid: tuple = tuple(round(1.2 + 0.1 * i, 1) for i in range(9))
    idle_grid: tuple = tuple(range(0, 49, 4))
    balloon_grid: tuple = tuple(range(0, 101, 10))
    sample_period_ms: int = 20
    noise_sigma_w: float = 0.25
    resolution_w: float = 0.01
    seed: int = 0
    # Shape constants of the static power map.
    base_idle_w: float = 5.0
    balloon_max_w: float = 76.0
    dvfs_exponent: float = 2.0
    lowpass_alpha: float = 0.45

    @property
    def sample_freq_hz(self) -> float:
        return 1000.0 / self.sample_period_ms

    def max_setting(self) -> "ActuatorSetting":
        return ActuatorSetting(self.dvfs_grid[-1], self.idle_grid[0],
                               self.balloon_grid[0])


@dataclass(frozen=True)
class ActuatorSetting:
    """One actuator command: DVFS in GHz, idle and balloon in percent."""

    dvfs_ghz: float
    idle_pct: float
    balloon_pct: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dvfs_ghz, self.idle_pct, self.balloon_pct])


@dataclass
class PlantState:
    """Mutable per-run plant memory: thermal lag value and the noise stream."""

    filtered_w: float
    rng: np.random.Generator


def sys1_profile(**overrides) -> MachineProfile:
    """Default 95 W desktop, DVFS 1.2..2.0 GHz."""
    return replace(MachineProfile(), **overrides) if overrides else MachineProfile()


def sys2_profile(**overrides) -> MachineProfile:
    """125 W desktop, DVFS 1.2..2.6 GHz."""
    base = MachineProfile(
        tdp_w=125.0,
        dvfs_grid=tuple(round(1.2 + 0.1 * i, 1) for i in range(15)),
        balloon_max_w=100.0,
    )
    return replace(base, **overrides) if overrides else base


BUILTIN_PROFILES = {"sys1": sys1_profile, "sys2": sys2_profile}

# JSON key -> dataclass field. Extra shape keys are optional.
_PROFILE_KEYS = {
    "tdp_w": "tdp_w",
    "dvfs_grid": "dvfs_grid",
    "idle_grid": "idle_grid",
    "balloon_grid": "balloon_grid",
    "sample_period_ms": "sample_period_ms",
    "noise_sigma_w": "noise_sigma_w",
    "resolution_w": "resolution_w",
    "seed": "seed",
    "base_idle_w": "base_idle_w",
    "balloon_max_w": "balloon_max_w",
    "dvfs_exponent": "dvfs_exponent",
    "lowpass_alpha": "lowpass_alpha",
}


def load_profile(source) -> MachineProfile:
    """Build a MachineProfile from a JSON file path, dict, or builtin name."""
    if isinstance(source, MachineProfile):
        return source
    if isinstance(source, str) and source in BUILTIN_PROFILES:
        return BUILTIN_PROFILES[source]()
    if isinstance(source, dict):
        raw = source
    else:
        with open(source) as fh:
            raw = json.load(fh)
    unknown = set(raw) - set(_PROFILE_KEYS)
    if unknown:
        raise ValueError(f"unknown profile keys: {sorted(unknown)}")
    kwargs = {}
    for key, fname in _PROFILE_KEYS.items():
        if key in raw:
            value = raw[key]
            kwargs[fname] = tuple(value) if isinstance(value, list) else value
    return MachineProfile(**kwargs)


def profile_hash(profile: MachineProfile) -> str:
    """Stable 16-hex-digit digest of the full profile contents."""
    blob = json.dumps(
        {k: getattr(profile, f) for k, f in _PROFILE_KEYS.items()},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def init_plant(profile: MachineProfile, seed=None) -> PlantState:
    """Fresh plant at the idle floor with a seeded noise stream."""
    rng = np.random.default_rng(profile.seed if seed is None else seed)
    return PlantState(filtered_w=profile.base_idle_w, rng=rng)


@functools.lru_cache(maxsize=8)
def _scale_table(profile: MachineProfile):
    grid = np.asarray(profile.dvfs_grid, dtype=float)
    table = (grid / grid[-1]) ** profile.dvfs_exponent
    return grid, table, dict(zip(grid.tolist(), table.tolist()))


@functools.lru_cache(maxsize=8)
def _balloon_table(profile: MachineProfile):
    grid = np.asarray(profile.balloon_grid, dtype=float)
    table = profile.balloon_max_w * grid / 100.0
    return grid, table, dict(zip(grid.tolist(), table.tolist()))


def dvfs_scale(profile: MachineProfile, dvfs_ghz: float) -> float:
    grid, table, exact = _scale_table(profile)
    # Quantized settings always sit on the grid; interpolate only off-grid.
    hit = exact.get(dvfs_ghz)
    return hit if hit is not None else float(np.interp(dvfs_ghz, grid, table))


def balloon_power(profile: MachineProfile, balloon_pct: float) -> float:
    grid, table, exact = _balloon_table(profile)
    hit = exact.get(balloon_pct)
    return hit if hit is not None else float(np.interp(balloon_pct, grid, table))


def raw_power(profile: MachineProfile, setting: ActuatorSetting,
              activity_demand: float) -> float:
    """Static power map before thermal lag, noise, clamp, and rounding."""
    active = activity_demand * (1.0 - setting.idle_pct / 100.0)
    return profile.base_idle_w + dvfs_scale(profile, setting.dvfs_ghz) * (
        active + balloon_power(profile, setting.balloon_pct))


def step_plant(state: PlantState, setting: ActuatorSetting,
               activity_demand: float, profile: MachineProfile) -> float:
    """Advance the plant one sample period and return the sensor reading."""
    if activity_demand < 0:
        raise ValueError(f"negative activity demand: {activity_demand}")
    raw = raw_power(profile, setting, activity_demand)
    filt = state.filtered_w + profile.lowpass_alpha * (raw - state.filtered_w)
    # Thermal memory stays physical even if the command asks for more than TDP.
    state.filtered_w = min(max(filt, 0.0), profile.tdp_w)
    noisy = state.filtered_w + state.rng.normal(0.0, profile.noise_sigma_w)
    measured = min(max(noisy, 0.0), profile.tdp_w)
    res = profile.resolution_w
    return round(measured / res) * res


def _snap(value: float, grid) -> float:
    """Clamp into the grid range, round to nearest level, ties toward lower."""
    v = min(max(float(value), grid[0]), grid[-1])
    idx = bisect.bisect_left(grid, v)
    if idx == 0:
        return float(grid[0])
    lo, hi = grid[idx - 1], grid[idx] if idx < len(grid) else grid[-1]
    if (v - lo) <= (hi - v) + _GRID_TIE_EPS:
        return float(lo)
    return float(hi)


def quantize_setting(setting: ActuatorSetting,
                     profile: MachineProfile) -> ActuatorSetting:
    """Map a continuous command onto the nearest grid levels."""
    return ActuatorSetting(
        dvfs_ghz=_snap(setting.dvfs_ghz, profile.dvfs_grid),
        idle_pct=_snap(setting.idle_pct, profile.idle_grid),
        balloon_pct=_snap(setting.balloon_pct, profile.balloon_grid),
    )
