"""Mask target generation: the sequences the defense steers power onto.

Five families, all clipped to [0, tdp]::

    Constant           one level for the whole run
    UniformRandom      level ~ U[range], redrawn every hold
    Gaussian           sample ~ N(mu, sigma), mu/sigma redrawn every hold
    Sinusoid           offset + amp * sin(2 pi T / period)
    GaussianSinusoid   sinusoid plus N(0, sigma) per-sample noise

Except for Constant, every drawn parameter set is held for a random 6..120
samples and then redrawn. The noise mean of GaussianSinusoid is folded into
the offset draw so family means share one range.

Draw ranges are fractions of TDP (frequencies fractions of the sample
rate) and are configurable via MaskRanges. The defaults are chosen so the
five families reproduce the qualitative time/frequency signature table (see
``expected_signature``) detectably at this simulation's scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analysis import fft_magnitude
from .plant import MachineProfile

FAMILIES = ("Constant", "UniformRandom", "Gaussian", "Sinusoid",
            "GaussianSinusoid")

HOLD_RANGE = (6, 120)        # samples a parameter draw stays active


@dataclass(frozen=True)
class MaskRanges:
    """Parameter draw ranges; fractions of tdp / sample rate."""

    offset: tuple = (0.35, 0.50)     # sinusoid-family offset
    amp: tuple = (0.08, 0.25)
    sigma: tuple = (0.02, 0.06)
    level: tuple = (0.22, 0.45)      # Constant / UniformRandom held level
    freq: tuple = (1 / 32, 1 / 18)   # fraction of the sample rate
    mu: tuple = (0.30, 0.55)         # Gaussian family center
    # Low clamp for emitted targets. No machine idles below its floor power;
    # commanding less just saturates the actuators, and the saturation level
    # depends on the running app, which is exactly the leak a mask must not
    # have. Keep this at or above the deepest-throttle power of the platform.
    floor: float = 0.22


@dataclass
class MaskParams:
    level: float = 0.0
    offset: float = 0.0
    amp: float = 0.0
    sigma: float = 0.0
    mu: float = 0.0
    period_samples: float = math.inf


@dataclass
class MaskProgram:
    family: str
    tdp_w: float
    sample_freq_hz: float
    ranges: MaskRanges
    rng: np.random.Generator
    params: MaskParams
    hold_remaining: int
    rerandomize_count: int = 0


def new_mask(family: str, profile: MachineProfile, seed: int,
             ranges: MaskRanges | None = None) -> MaskProgram:
    if family not in FAMILIES:
        raise ValueError(f"unknown mask family {family!r}")
    ranges = ranges or MaskRanges()
    rng = np.random.default_rng(seed)
    mask = MaskProgram(family=family, tdp_w=profile.tdp_w,
                       sample_freq_hz=profile.sample_freq_hz, ranges=ranges,
                       rng=rng, params=MaskParams(), hold_remaining=0)
    _redraw(mask, first=True)
    mask.rerandomize_count = 0
    return mask


def _uniform(rng, frac_range, scale):
    lo, hi = frac_range
    return scale * rng.uniform(lo, hi)


def _redraw(mask: MaskProgram, first: bool = False) -> None:
    """Draw a fresh parameter set and hold length."""
    rng, r, tdp = mask.rng, mask.ranges, mask.tdp_w
    p = mask.params
    if mask.family == "Constant":
        # Level chosen once per program; later calls only refresh the clock.
        if first:
            p.level = _uniform(rng, r.level, tdp)
    elif mask.family == "UniformRandom":
        p.level = _uniform(rng, r.level, tdp)
    elif mask.family == "Gaussian":
        p.mu = _uniform(rng, r.mu, tdp)
        p.sigma = _uniform(rng, r.sigma, tdp)
    else:
        p.offset = _uniform(rng, r.offset, tdp)
        p.amp = _uniform(rng, r.amp, tdp)
        freq_hz = _uniform(rng, r.freq, mask.sample_freq_hz)
        if freq_hz >= mask.sample_freq_hz / 2:
            raise ValueError("sinusoid frequency must stay below Nyquist")
        p.period_samples = mask.sample_freq_hz / freq_hz
        if mask.family == "GaussianSinusoid":
            p.sigma = _uniform(rng, r.sigma, tdp)
    mask.hold_remaining = int(rng.integers(HOLD_RANGE[0], HOLD_RANGE[1] + 1))
    mask.rerandomize_count += 1


def next_target(mask: MaskProgram, t: int) -> float:
    """Target power for sample t, watts, clipped to [floor*tdp, tdp]."""
    if mask.hold_remaining <= 0:
        _redraw(mask)
    mask.hold_remaining -= 1
    p = mask.params
    fam = mask.family
    if fam == "Constant" or fam == "UniformRandom":
        value = p.level
    elif fam == "Gaussian":
        value = p.mu + p.sigma * mask.rng.standard_normal()
    else:
        value = p.offset + p.amp * math.sin(2.0 * math.pi * t / p.period_samples)
        if fam == "GaussianSinusoid":
            value += p.sigma * mask.rng.standard_normal()
    return min(max(value, mask.ranges.floor * mask.tdp_w), mask.tdp_w)


def generate(family: str, profile: MachineProfile, n_samples: int, seed: int,
             ranges: MaskRanges | None = None) -> np.ndarray:
    """Convenience: the first n_samples of a fresh mask program."""
    mask = new_mask(family, profile, seed, ranges)
    return np.array([next_target(mask, t) for t in range(n_samples)])


# --- qualitative signature -------------------------------------------------

@dataclass(frozen=True)
class SignatureThresholds:
    """Documented constants behind the yes/no signature calls."""

    mean_window_t: int = 256         # long window; periodic content averages out
    var_window_t: int = 8            # most windows sit inside a single hold
    mean_spread_frac: float = 0.05   # of tdp
    var_ratio: float = 2.0           # q80/q20 of short-window variances
    var_floor_frac: float = 0.005    # of tdp, variance floor
    band_min_frac: float = 0.05      # analysis band starts here, of Nyquist
    smooth_bins: int = 129           # moving-average width on the magnitude
    occupied_level: float = 0.05     # of the band's max smoothed magnitude
    occupied_frac: float = 0.40      # spread iff occupancy at least this
    peak_ratio: float = 4.0          # smoothed power local max vs band median
    rise_ratio: float = 4.0          # and vs the valley on its low side
    energy_floor: float = 1e-9


@dataclass(frozen=True)
class SpectralSignature:
    family: str
    mean_changes: bool
    variance_changes: bool
    spread_metric: float             # occupied fraction of the analysis band
    peak_count: int
    mean_spread_w: float
    var_quantile_ratio: float

    @property
    def spread(self) -> bool:
        return self.spread_metric >= SignatureThresholds().occupied_frac

    @property
    def peaks(self) -> bool:
        return self.peak_count >= 1


# (mean changes, variance changes, spectral spread, frequency peaks)
SIGNATURE_TABLE = {
    "Constant": (False, False, False, False),
    "UniformRandom": (True, False, True, False),
    "Gaussian": (True, True, True, False),
    "Sinusoid": (True, True, False, True),
    "GaussianSinusoid": (True, True, True, True),
}


def expected_signature(family: str) -> tuple:
    return SIGNATURE_TABLE[family]


def _smooth(mag: np.ndarray, width: int) -> np.ndarray:
    kernel = np.ones(width) / width
    return np.convolve(mag, kernel, mode="same")


def _count_peaks(band: np.ndarray, th: SignatureThresholds) -> int:
    """Count distinct spectral lines in the smoothed band.

    A line must stand over the band median (significance) and over the
    valley on its low-frequency side (shape). The second test is what
    separates a held-parameter random walk, whose spectrum only decays away
    from DC, from a real oscillation: a decaying slope never rises into a
    candidate, so its ripples have no valley below them. Maxima closer than
    the smoothing width are one smeared line, counted once.
    """
    med = float(np.median(band))
    sig_floor = th.peak_ratio * max(med, th.energy_floor)
    interior = band[1:-1]
    is_max = (interior > band[:-2]) & (interior > band[2:])
    idx = np.nonzero(is_max & (interior >= sig_floor))[0] + 1
    n_peaks = 0
    last = -10 * th.smooth_bins
    for k in idx:
        valley = float(band[:k].min())
        if band[k] < th.rise_ratio * max(valley, th.energy_floor):
            continue
        if k - last > th.smooth_bins:
            n_peaks += 1
        last = k
    return n_peaks


def spectral_signature(family: str, profile: MachineProfile,
                       n_samples: int = 10000, seed: int = 0,
                       ranges: MaskRanges | None = None,
                       thresholds: SignatureThresholds | None = None
                       ) -> SpectralSignature:
    """Measure the four qualitative properties of one family's output."""
    th = thresholds or SignatureThresholds()
    x = generate(family, profile, n_samples, seed, ranges)

    def _windowed(width):
        n_win = len(x) // width
        return x[:n_win * width].reshape(n_win, width)

    means = _windowed(th.mean_window_t).mean(axis=1)
    variances = _windowed(th.var_window_t).var(axis=1, ddof=1)
    mean_spread = float(means.max() - means.min())
    floor = (th.var_floor_frac * profile.tdp_w) ** 2
    q20, q80 = np.quantile(variances, [0.2, 0.8])
    var_ratio = float((q80 + floor) / (q20 + floor))

    spec = fft_magnitude(x)
    mag = _smooth(spec.magnitude, th.smooth_bins)
    # Peaks are judged on smoothed power, not magnitude: squaring doubles the
    # log-contrast between a real line and the rolloff of a hold process, and
    # that contrast is what rise_ratio thresholds.
    power = _smooth(spec.magnitude ** 2, th.smooth_bins)
    n_bins = len(mag)
    k0 = int(th.band_min_frac * n_bins)
    margin = th.smooth_bins // 2 + 1
    band = mag[k0:n_bins - margin]
    if band.size == 0 or float(band.max()) < th.energy_floor:
        occupied = 0.0
        n_peaks = 0
    else:
        occupied = float(np.mean(band >= th.occupied_level * band.max()))
        n_peaks = _count_peaks(power[k0:n_bins - margin], th)
    return SpectralSignature(
        family=family,
        mean_changes=mean_spread > th.mean_spread_frac * profile.tdp_w,
        variance_changes=var_ratio > th.var_ratio,
        spread_metric=occupied,
        peak_count=n_peaks,
        mean_spread_w=mean_spread,
        var_quantile_ratio=var_ratio,
    )


def signature_booleans(sig: SpectralSignature,
                       thresholds: SignatureThresholds | None = None) -> tuple:
    th = thresholds or SignatureThresholds()
    return (sig.mean_changes, sig.variance_changes,
            sig.spread_metric >= th.occupied_frac, sig.peak_count >= 1)
