"""Spectral, change-point, and run-averaging analysis of power traces.

These are the observer-side tools: everything here sees only a measured
power series, never the generator state that produced it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Variance floor keeps segment costs finite on exactly-constant data.
_VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class Spectrum:
    freqs: np.ndarray        # bin frequencies, Hz (cycles/sample if fs=1)
    magnitude: np.ndarray    # |rfft| of the mean-removed, zero-padded signal
    n_signal: int
    n_fft: int
    sample_freq: float


@dataclass(frozen=True)
class Peak:
    bin: int
    freq: float
    magnitude: float


@dataclass(frozen=True)
class ChangePointReport:
    boundaries: list          # first sample of each new segment, ascending
    segment_means: np.ndarray
    segment_vars: np.ndarray
    n: int

    def __post_init__(self):
        b = list(self.boundaries)
        if b != sorted(set(b)) or (b and not (0 < b[0] and b[-1] < self.n)):
            raise ValueError("boundaries must be strictly increasing, inside the trace")

    def __iter__(self):
        return iter(self.boundaries)

    def __len__(self):
        return len(self.boundaries)


@dataclass(frozen=True)
class AveragingStats:
    app_id: int
    condition: str
    averaged: np.ndarray     # pointwise mean across runs
    median: float
    q25: float
    q75: float
    whisker_lo: float        # most extreme values inside 1.5*IQR fences
    whisker_hi: float
    outliers: np.ndarray


def fft_magnitude(signal, sample_freq: float = 1.0) -> Spectrum:
    """One-sided magnitude spectrum, mean removed, zero-padded to 2**k."""
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("signal must be 1-D with at least 2 samples")
    n = x.size
    n_fft = 1 << (n - 1).bit_length()
    centered = x - x.mean()
    mag = np.abs(np.fft.rfft(centered, n=n_fft))
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_freq)
    return Spectrum(freqs=freqs, magnitude=mag, n_signal=n, n_fft=n_fft,
                    sample_freq=sample_freq)


def _local_median(mag: np.ndarray, window: int) -> np.ndarray:
    """Sliding median of the non-DC magnitude (reflect-padded at the ends)."""
    body = mag[1:]                     # never include the DC bin
    half = max(window // 2, 1)
    padded = np.pad(body, half, mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, 2 * half + 1)
    med = np.median(windows, axis=1)
    return np.concatenate(([med[0]], med))


def detect_peaks(spectrum: Spectrum, prominence: float,
                 local_window: int | None = 129,
                 min_freq_frac: float = 0.05) -> list[Peak]:
    """Local maxima at least ``prominence`` times the median floor.

    The floor is a sliding local median of the magnitude so a broad
    low-frequency pedestal does not count as a forest of peaks; pass
    ``local_window=None`` to compare against the global median instead.
    Bins below ``min_freq_frac`` of Nyquist are excluded along with DC: a
    level that drifts on the scale of tens of samples parks its power right
    next to DC, and that is mean structure, not an oscillation.
    """
    if prominence <= 1.0:
        raise ValueError("prominence must exceed 1")
    mag = spectrum.magnitude
    if mag.size < 4:
        return []
    k_min = max(1, int(np.ceil(min_freq_frac * (mag.size - 1))))
    interior = mag[1:-1]
    is_max = (interior > mag[:-2]) & (interior > mag[2:])
    candidates = np.nonzero(is_max)[0] + 1
    candidates = candidates[candidates >= k_min]
    if candidates.size == 0:
        return []
    if local_window is None or local_window >= mag.size - k_min:
        floor = np.full(mag.size, np.median(mag[k_min:]))
    else:
        floor = _local_median(mag, local_window)
    # Synthetic signals can have a numerically-zero floor; FFT rounding
    # ripple then passes any ratio test. Nothing below 1e-9 of the top
    # magnitude is a line.
    floor = np.maximum(floor, 1e-9 * float(mag.max()))
    keep = mag[candidates] >= prominence * floor[candidates]
    peaks = [Peak(int(k), float(spectrum.freqs[k]), float(mag[k]))
             for k in candidates[keep]]
    peaks.sort(key=lambda p: -p.magnitude)
    return peaks


def _segment_cost(s1, s2, lo, hi):
    """Gaussian ML cost (mean and variance free), n*log(sigma^2) up to consts."""
    n = hi - lo
    total = s1[hi] - s1[lo]
    sq = s2[hi] - s2[lo]
    var = max(sq / n - (total / n) ** 2, 0.0)
    return n * math.log(max(var, _VAR_FLOOR))


def _best_split(s1, s2, lo, hi, min_size):
    """Best single split of [lo, hi) and its cost reduction."""
    cuts = np.arange(lo + min_size, hi - min_size + 1)
    if cuts.size == 0:
        return None, 0.0
    nl = cuts - lo
    nr = hi - cuts
    sum_l = s1[cuts] - s1[lo]
    sum_r = s1[hi] - s1[cuts]
    sq_l = s2[cuts] - s2[lo]
    sq_r = s2[hi] - s2[cuts]
    var_l = np.maximum(sq_l / nl - (sum_l / nl) ** 2, _VAR_FLOOR)
    var_r = np.maximum(sq_r / nr - (sum_r / nr) ** 2, _VAR_FLOOR)
    split_cost = nl * np.log(var_l) + nr * np.log(var_r)
    k = int(np.argmin(split_cost))
    gain = _segment_cost(s1, s2, lo, hi) - float(split_cost[k])
    return int(cuts[k]), gain


def change_points(signal, penalty: float | None = None,
                  min_size: int = 10) -> ChangePointReport:
    """Change-point report by binary segmentation.

    Each segment is scored as a Gaussian with its own mean and variance, so
    both level shifts and variance shifts register. A split is accepted when
    it lowers the total cost by more than ``penalty`` (default 3*log(n)).
    Boundary indices are first samples of new segments, sorted.
    """
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1 or x.size < 2 * min_size:
        raise ValueError(f"signal must be 1-D with at least {2 * min_size} samples")
    n = x.size
    if penalty is None:
        penalty = 3.0 * math.log(n)
    s1 = np.concatenate(([0.0], np.cumsum(x)))
    s2 = np.concatenate(([0.0], np.cumsum(x * x)))
    found: list[int] = []
    stack = [(0, n)]
    while stack:
        lo, hi = stack.pop()
        cut, gain = _best_split(s1, s2, lo, hi, min_size)
        if cut is None or gain <= penalty:
            continue
        found.append(cut)
        stack.append((lo, cut))
        stack.append((cut, hi))
    found.sort()
    edges = [0] + found + [n]
    segs = [x[a:b] for a, b in zip(edges[:-1], edges[1:])]
    return ChangePointReport(
        boundaries=found,
        segment_means=np.array([s.mean() for s in segs]),
        segment_vars=np.array([s.var() for s in segs]),
        n=n)


def averaging_study(traces_by_app: dict, condition: str,
                    min_runs: int = 30) -> dict[int, AveragingStats]:
    """Pointwise-average each app's runs, then box-plot the averaged series.

    ``traces_by_app`` maps app_id to a sequence of equal-length 1-D power
    series (one per run).
    """
    out = {}
    lengths = set()
    for app_id, runs in traces_by_app.items():
        if len(runs) < min_runs:
            raise ValueError(f"app {app_id}: {len(runs)} runs < required {min_runs}")
        arr = np.asarray([np.asarray(r, dtype=float) for r in runs])
        lengths.add(arr.shape[1])
        if len(lengths) > 1:
            raise ValueError("all traces must have equal length")
        averaged = arr.mean(axis=0)
        q25, med, q75 = np.percentile(averaged, [25, 50, 75])
        iqr = q75 - q25
        lo_fence, hi_fence = q25 - 1.5 * iqr, q75 + 1.5 * iqr
        inside = averaged[(averaged >= lo_fence) & (averaged <= hi_fence)]
        out[app_id] = AveragingStats(
            app_id=app_id, condition=condition, averaged=averaged,
            median=float(med), q25=float(q25), q75=float(q75),
            whisker_lo=float(inside.min()), whisker_hi=float(inside.max()),
            outliers=averaged[(averaged < lo_fence) | (averaged > hi_fence)],
        )
    return out
