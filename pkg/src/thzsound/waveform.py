"""Periodic Frank-Zadoff-Chu multitone sounding waveform.

The sequence is placed in the frequency domain: ``n_tones`` active bins at
``tone_spacing_hz`` spacing, centred on DC, synthesized on an ``n_samples``
grid at ``sample_rate_hz``. One synthesized period is the sounding signal.
"""

from dataclasses import dataclass, field, replace
from math import gcd

import numpy as np

from . import _accel
from .errors import InvalidArgument

__all__ = [
    "ToneGrid",
    "Waveform",
    "CrestOptConfig",
    "generate_fzc",
    "synthesize_period",
    "crest_factor",
    "optimize_crest",
    "interpolate_periodic",
    "out_of_band_db",
    "nominal_grid",
    "fzc_waveform",
]


@dataclass(frozen=True)
class ToneGrid:
    n_tones: int
    tone_spacing_hz: float
    sample_rate_hz: float
    n_samples: int

    def __post_init__(self):
        if self.n_tones < 1 or self.n_samples < 1:
            raise InvalidArgument("tone and sample counts must be positive")
        if self.tone_spacing_hz <= 0 or self.sample_rate_hz <= 0:
            raise InvalidArgument("frequencies must be positive")
        if self.n_tones > self.n_samples:
            raise InvalidArgument(
                f"occupied bandwidth {self.bandwidth_hz:g} Hz exceeds "
                f"sample rate {self.sample_rate_hz:g} Hz"
            )
        # one period must hold exactly one tone-spacing cycle
        period = self.n_samples / self.sample_rate_hz
        if abs(period * self.tone_spacing_hz - 1.0) > 1e-9:
            raise InvalidArgument(
                f"grid inconsistent: n_samples/sample_rate = {period:g} s "
                f"but 1/tone_spacing = {1.0 / self.tone_spacing_hz:g} s"
            )

    @classmethod
    def from_bandwidth(cls, n_tones, bandwidth_hz, sample_rate_hz):
        spacing = bandwidth_hz / n_tones
        n_samples = sample_rate_hz / spacing
        if abs(n_samples - round(n_samples)) > 1e-6:
            raise InvalidArgument(
                f"sample_rate/tone_spacing = {n_samples:g} is not an integer"
            )
        return cls(int(n_tones), float(spacing), float(sample_rate_hz), int(round(n_samples)))

    @property
    def bandwidth_hz(self):
        return self.n_tones * self.tone_spacing_hz

    @property
    def period_s(self):
        return self.n_samples / self.sample_rate_hz

    @property
    def tone_index(self):
        """Signed tone number of each active tone, ascending in frequency."""
        return np.arange(self.n_tones) - self.n_tones // 2

    @property
    def active_bins(self):
        """FFT bin of each active tone on the ``n_samples`` grid."""
        return self.tone_index % self.n_samples

    @property
    def tone_frequencies_hz(self):
        return self.tone_index * self.tone_spacing_hz


def nominal_grid():
    """2000 tones over 2 GHz sampled at 2.4 GS/s (1 us period)."""
    return ToneGrid.from_bandwidth(2000, 2e9, 2.4e9)


@dataclass(frozen=True)
class Waveform:
    """One period of the complex baseband sounding signal.

    ``samples`` is peak-normalized; ``norm`` is the factor removed by that
    normalization so that ``fft(samples)[active_bins] * norm`` recovers the
    tone coefficients the waveform was synthesized from.
    """

    samples: np.ndarray
    grid: ToneGrid
    crest_factor_db: float
    norm: float = 1.0
    root: int | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.complex128)
        if s.ndim != 1 or s.size != self.grid.n_samples:
            raise InvalidArgument(
                f"waveform has {s.size} samples, grid expects {self.grid.n_samples}"
            )
        s = s.copy()
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    @property
    def spectrum(self):
        """Complex amplitude on each active tone."""
        return np.fft.fft(self.samples)[self.grid.active_bins] * self.norm

    @property
    def power(self):
        return float(np.mean(np.abs(self.samples) ** 2))


def generate_fzc(n_tones, root=1):
    """Frank-Zadoff-Chu coefficients ``exp(-j*pi*root*k*(k + N mod 2)/N)``."""
    n_tones = int(n_tones)
    root = int(root)
    if n_tones < 2:
        raise InvalidArgument(f"n_tones must be >= 2, got {n_tones}")
    if gcd(root, n_tones) != 1:
        raise InvalidArgument(f"root {root} is not coprime with {n_tones}")
    k = np.arange(n_tones, dtype=np.int64)
    # k*(k+odd) can reach 4e12 for big N; reduce mod 2N before scaling
    arg = (k * (k + (n_tones % 2)) * root) % (2 * n_tones)
    return np.exp(-1j * np.pi * arg / n_tones)


def synthesize_period(tones, grid):
    tones = np.asarray(tones, dtype=np.complex128)
    if tones.ndim != 1 or tones.size != grid.n_tones:
        raise InvalidArgument(
            f"got {tones.size} tone coefficients for a {grid.n_tones}-tone grid"
        )
    spec = np.zeros(grid.n_samples, dtype=np.complex128)
    spec[grid.active_bins] = tones
    x = np.fft.ifft(spec)
    peak = float(np.max(np.abs(x)))
    if peak == 0.0:
        raise InvalidArgument("all tone coefficients are zero")
    x = x / peak
    return Waveform(x, grid, crest_factor(x, 8), norm=peak)


def fzc_waveform(grid, root=1):
    """Synthesize the raw (unoptimized) FZC sounding period on ``grid``."""
    w = synthesize_period(generate_fzc(grid.n_tones, root), grid)
    return replace(w, root=int(root))


def interpolate_periodic(x, factor):
    """Band-limited interpolation of one period by zero-padding its spectrum."""
    x = np.asarray(x, dtype=np.complex128)
    factor = int(factor)
    if factor < 1:
        raise InvalidArgument("oversample factor must be >= 1")
    if factor == 1:
        return x.copy()
    n = x.size
    spec = np.fft.fft(x)
    padded = np.zeros(n * factor, dtype=np.complex128)
    half = n // 2
    if n % 2:
        padded[: half + 1] = spec[: half + 1]
        padded[n * factor - half:] = spec[half + 1:]
    else:
        # split the Nyquist bin so real signals stay real
        padded[:half] = spec[:half]
        padded[n * factor - half + 1:] = spec[half + 1:]
        padded[half] += 0.5 * spec[half]
        padded[n * factor - half] += 0.5 * spec[half]
    return np.fft.ifft(padded) * factor


def crest_factor(w, oversample=8):
    """Peak-to-RMS ratio in dB, evaluated on the ``oversample``-times grid."""
    x = w.samples if isinstance(w, Waveform) else np.asarray(w)
    if oversample < 1:
        raise InvalidArgument("oversample must be >= 1")
    y = np.abs(interpolate_periodic(x, oversample))
    rms = np.sqrt(np.mean(y * y))
    if rms == 0.0:
        raise InvalidArgument("crest factor of an all-zero waveform is undefined")
    return float(max(20.0 * np.log10(np.max(y) / rms), 0.0))


def out_of_band_db(w):
    """Energy outside the active tone set relative to in-band energy, in dB."""
    spec = np.fft.fft(w.samples)
    mask = np.zeros(spec.size, dtype=bool)
    mask[w.grid.active_bins] = True
    inband = np.sum(np.abs(spec[mask]) ** 2)
    outband = np.sum(np.abs(spec[~mask]) ** 2)
    if outband == 0.0:
        return -np.inf
    return float(10.0 * np.log10(outband / inband))


@dataclass(frozen=True)
class CrestOptConfig:
    """Settings of the clip-and-restore crest-factor optimizer.

    The envelope is projected onto ``clip_level`` x RMS on the oversampled
    grid, starting from ``clip_start`` and annealed linearly over the first
    ``anneal_iterations``. ``ripple_db`` bounds the in-band magnitude change
    per tone.
    """

    max_iterations: int = 4000
    target_cf_db: float = 0.3
    clip_level: float = 1.0
    clip_start: float = 1.0
    anneal_iterations: int = 0
    oversample_factor: int = 8
    tolerance_db: float = 1e-4
    patience: int = 1000
    ripple_db: float = 0.5
    relaxation: float = 1.5

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidArgument("max_iterations must be >= 1")
        if self.oversample_factor < 4:
            raise InvalidArgument("oversample_factor must be >= 4")
        if self.clip_level <= 0 or self.clip_start <= 0:
            raise InvalidArgument("clip levels must be positive")
        if not 0.0 < self.relaxation < 2.0:
            raise InvalidArgument("relaxation must lie in (0, 2)")
        if self.ripple_db < 0:
            raise InvalidArgument("ripple_db must be >= 0")


def optimize_crest(w, cfg=None):
    """Lower the crest factor of ``w`` by alternating projections.

    Each iteration projects the oversampled envelope toward a constant level
    (time domain), then restores the spectrum: inactive bins are zeroed,
    active magnitudes are clamped to within ``cfg.ripple_db`` of the input and
    phases are kept. The lowest-CF iterate is returned; if none beats the
    input, ``w`` itself comes back.
    """
    cfg = cfg or CrestOptConfig()
    grid = w.grid
    L = cfg.oversample_factor
    n = grid.n_samples
    bins = grid.active_bins

    start_cf = crest_factor(w, L)
    if start_cf <= cfg.target_cf_db:
        return w

    spec0 = np.fft.fft(w.samples)
    mag0 = np.abs(spec0[bins])
    lo = mag0 * 10.0 ** (-cfg.ripple_db / 20.0)
    hi = mag0 * 10.0 ** (cfg.ripple_db / 20.0)
    support = mag0 > 0

    # oversampled spectrum layout: active bins keep their signed position
    tone_idx = grid.tone_index
    os_bins = tone_idx % (n * L)

    def to_time(active):
        big = np.zeros(n * L, dtype=np.complex128)
        big[os_bins] = active
        return np.fft.ifft(big) * L

    active = spec0[bins].copy()
    best_active, best_cf = active, start_cf
    since_best = 0
    for it in range(cfg.max_iterations):
        y = to_time(active)
        env = np.abs(y)
        rms = np.sqrt(np.mean(env * env))
        cf = 20.0 * np.log10(np.max(env) / rms)
        if cf < best_cf - cfg.tolerance_db:
            since_best = 0
        else:
            since_best += 1
        if cf < best_cf:
            best_cf, best_active = cf, active
        if best_cf <= cfg.target_cf_db or since_best >= cfg.patience:
            break

        if cfg.anneal_iterations > 0:
            frac = min(it / cfg.anneal_iterations, 1.0)
        else:
            frac = 1.0
        level = (cfg.clip_start + (cfg.clip_level - cfg.clip_start) * frac) * rms
        if level >= np.max(env):
            y_new = y
        else:
            y_new = _accel.envelope_project(y, level, cfg.relaxation)
            if level > rms:
                # above-unity levels only clip; samples under the level stay put
                y_new = np.where(env > level, y_new, y)

        restored = np.fft.fft(y_new)[os_bins] / L
        mag = np.clip(np.abs(restored), lo, hi)
        active = np.where(support, mag * np.exp(1j * np.angle(restored)), 0.0)

    if best_cf >= start_cf:
        return w
    spec = np.zeros(n, dtype=np.complex128)
    spec[bins] = best_active
    x = np.fft.ifft(spec)
    peak = float(np.max(np.abs(x)))
    out = replace(
        w,
        samples=x / peak,
        crest_factor_db=crest_factor(x, 8),
        norm=peak,
        meta={**w.meta, "crest_optimized": True, "crest_start_db": start_cf},
    )
    if out.crest_factor_db > w.crest_factor_db:
        return w
    return out
