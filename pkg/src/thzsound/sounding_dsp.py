"""Snapshot-to-impulse-response processing.

Frequency responses live on the active tone set of a :class:`ToneGrid`.
Impulse responses are scaled so that a calibrated unit-gain path yields a
0 dB peak: ``h[m] = (1/N) * sum_k H_k * exp(2j*pi*k*m/n)`` over the ``N``
active tones of an ``n``-sample period.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import windows

from . import _accel
from .errors import DegenerateReference, InvalidArgument, LowSnrTrackingWarning
from .waveform import ToneGrid, Waveform

CLAMP_BELOW_MEDIAN_DB = 40.0
TRACKING_MIN_PROMINENCE_DB = 6.0


@dataclass(frozen=True)
class GainBudget:
    g_corr_db: float
    g_avrg_db: float
    g_proc_db: float

    def to_dict(self):
        return {"g_corr_db": self.g_corr_db, "g_avrg_db": self.g_avrg_db,
                "g_proc_db": self.g_proc_db}


def gain_budget(n_seq, n_avrg):
    """Correlation, averaging and total processing gain in dB."""
    if n_seq < 1 or n_avrg < 1:
        raise InvalidArgument("sequence length and averaging count must be >= 1")
    g_corr = 10.0 * np.log10(n_seq)
    g_avrg = 10.0 * np.log10(n_avrg)
    return GainBudget(float(g_corr), float(g_avrg), float(g_corr + g_avrg))


@dataclass(frozen=True)
class FrequencyResponse:
    bins: np.ndarray
    grid: ToneGrid
    center_offset_hz: float = 0.0

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=np.complex128)
        if b.shape != (self.grid.n_tones,):
            raise InvalidArgument(
                f"frequency response has {b.size} bins, grid has {self.grid.n_tones} tones"
            )
        if not np.all(np.isfinite(b)):
            raise InvalidArgument("frequency response contains non-finite bins")
        object.__setattr__(self, "bins", b)

    @property
    def tone_spacing_hz(self):
        return self.grid.tone_spacing_hz

    @property
    def frequencies_hz(self):
        return self.grid.tone_frequencies_hz + self.center_offset_hz


@dataclass(frozen=True)
class ImpulseResponse:
    taps: np.ndarray
    delay_step_s: float
    t0_offset_s: float = 0.0
    calibrated: bool = False

    def __post_init__(self):
        if self.delay_step_s <= 0:
            raise InvalidArgument("delay step must be positive")
        object.__setattr__(self, "taps", np.asarray(self.taps, dtype=np.complex128))

    @property
    def delays_s(self):
        return self.t0_offset_s + np.arange(self.taps.size) * self.delay_step_s

    @property
    def power_db(self):
        p = np.abs(self.taps) ** 2
        with np.errstate(divide="ignore"):
            return np.maximum(10.0 * np.log10(p), -300.0)


@dataclass(frozen=True)
class CalibrationProfile:
    """Back-to-back system response with the known inserted loss divided out."""

    system_fr: FrequencyResponse
    n_averages_used: int
    noise_floor_estimate_db: float
    reference_loss_db: float = 0.0

    def __post_init__(self):
        if np.any(self.system_fr.bins == 0):
            raise InvalidArgument("calibration profile has zero bins")


@dataclass(frozen=True)
class WindowSpec:
    kind: str = "chebyshev"
    sidelobe_db: float = 80.0

    def __post_init__(self):
        if self.kind not in ("chebyshev", "none"):
            raise InvalidArgument(f"unsupported window kind {self.kind!r}")
        if self.kind == "chebyshev" and self.sidelobe_db <= 0:
            raise InvalidArgument("sidelobe_db must be > 0")

    @classmethod
    def parse(cls, text):
        """Parse ``"chebyshev:80"`` or ``"none"``."""
        if text is None or text == "none":
            return cls("none", 0.0)
        kind, _, level = text.partition(":")
        return cls(kind, float(level) if level else 80.0)

    def __str__(self):
        return "none" if self.kind == "none" else f"{self.kind}:{self.sidelobe_db:g}"

    def coefficients(self, n):
        """Window over ``n`` bins, normalized to unit mean (preserves IR peak)."""
        if self.kind == "none":
            return np.ones(n)
        w = windows.chebwin(n, at=self.sidelobe_db, sym=True)
        return w / np.mean(w)


# ---------------------------------------------------------------------------
# estimation

def reference_spectrum(reference):
    """Active-bin spectrum of the reference period, checked for empty bins."""
    spec = np.fft.fft(reference.samples)[reference.grid.active_bins]
    mag = np.abs(spec)
    if np.min(mag) < 1e-6 * np.median(mag):
        raise DegenerateReference("reference has (near-)empty active bins")
    return spec


def circular_xcorr(x, ref):
    """Circular cross-correlation ``r[m] = sum_n x[(n + m) % N] * conj(ref[n])`` via FFT."""
    x = np.asarray(x)
    ref = np.asarray(ref)
    if x.shape[-1] != ref.shape[-1]:
        raise InvalidArgument("signals must have the same period")
    return np.fft.ifft(np.fft.fft(x, axis=-1) * np.conj(np.fft.fft(ref)), axis=-1)


def estimate_fr_bins(snapshots, reference, ref_spec=None):
    """Per-bin ratio of snapshot and reference spectra for a stack of rows."""
    snapshots = np.atleast_2d(snapshots)
    if snapshots.shape[-1] != reference.grid.n_samples:
        raise InvalidArgument(
            f"snapshot length {snapshots.shape[-1]} != reference period "
            f"{reference.grid.n_samples}"
        )
    if ref_spec is None:
        ref_spec = reference_spectrum(reference)
    return np.fft.fft(snapshots, axis=-1)[:, reference.grid.active_bins] / ref_spec


def estimate_fr(snapshot, reference):
    """Frequency response of one captured period against the reference.

    Equivalent to circular cross-correlation with the reference followed by
    division by the reference power spectrum; inactive bins are dropped.
    """
    snapshot = np.asarray(snapshot)
    if snapshot.ndim != 1:
        raise InvalidArgument("estimate_fr takes a single snapshot")
    return FrequencyResponse(estimate_fr_bins(snapshot, reference)[0], reference.grid)


def _regularized(cal_bins):
    mag = np.abs(cal_bins)
    floor = np.median(mag) * 10.0 ** (-CLAMP_BELOW_MEDIAN_DB / 20.0)
    small = mag < floor
    if not np.any(small):
        return cal_bins
    out = cal_bins.copy()
    phase = np.where(mag > 0, cal_bins / np.where(mag > 0, mag, 1.0), 1.0)
    out[small] = floor * phase[small]
    return out


def calibrate(fr, cal):
    if fr.grid != cal.system_fr.grid:
        raise InvalidArgument("frequency response and calibration grids differ")
    return FrequencyResponse(fr.bins / _regularized(cal.system_fr.bins), fr.grid,
                             fr.center_offset_hz)


def make_calibration_profile(fr, n_averages_used, reference_loss_db=0.0, noise_floor_db=np.nan):
    """Profile from an averaged back-to-back FR measured through a known loss."""
    gain = 10.0 ** (-reference_loss_db / 20.0)
    return CalibrationProfile(
        FrequencyResponse(fr.bins / gain, fr.grid, fr.center_offset_hz),
        int(n_averages_used), float(noise_floor_db), float(reference_loss_db),
    )


def apply_window(fr, spec=None):
    """Multiply ``fr`` by a unit-mean Dolph-Chebyshev window over its bins."""
    spec = spec or WindowSpec()
    if isinstance(spec, dict):
        spec = WindowSpec(spec.get("kind", "chebyshev"), float(spec.get("sidelobe_db", 80.0)))
    w = spec.coefficients(fr.bins.size)
    return FrequencyResponse(fr.bins * w, fr.grid, fr.center_offset_hz)


def ir_from_bins(bins, grid):
    """IR rows (last axis = delay) from FR bins on ``grid``'s active tones."""
    bins = np.atleast_2d(bins)
    full = np.zeros((bins.shape[0], grid.n_samples), dtype=np.complex128)
    full[:, grid.active_bins] = bins
    return np.fft.ifft(full, axis=-1) * (grid.n_samples / grid.n_tones)


def to_impulse_response(fr, calibrated=False):
    taps = ir_from_bins(fr.bins, fr.grid)[0]
    return ImpulseResponse(taps, 1.0 / fr.grid.sample_rate_hz, 0.0, calibrated)


def steering_vector(grid, delay_bin):
    """Weights ``v`` such that ``bins @ v`` is IR tap ``delay_bin``."""
    return np.exp(2j * np.pi * grid.tone_index * delay_bin / grid.n_samples) / grid.n_tones


# ---------------------------------------------------------------------------
# phase tracking and averaging

@dataclass
class TrackingResult:
    phases_rad: np.ndarray
    corrected: np.ndarray
    ref_bin: int


def _group_mean(rows, m):
    if m <= 1:
        return rows
    usable = (rows.shape[0] // m) * m
    if usable == 0:
        raise InvalidArgument(f"pre-average group of {m} exceeds {rows.shape[0]} snapshots")
    return rows[:usable].reshape(-1, m, rows.shape[1]).mean(axis=1)


def _prominence_db(ir_rows, ref_bin, guard=20):
    p = np.abs(ir_rows) ** 2
    n = p.shape[1]
    idx = np.arange(n)
    dist = np.minimum((idx - ref_bin) % n, (ref_bin - idx) % n)
    floor = p[:, dist > guard].mean(axis=1)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(p[:, ref_bin] / floor)


def track_phase(irs, ref_bin=None, pre_average=1, min_prominence_db=TRACKING_MIN_PROMINENCE_DB):
    """Zero the phase of the main IR peak in every snapshot.

    ``irs`` is a sequence of :class:`ImpulseResponse` or a 2-D tap array.
    With ``pre_average = m`` consecutive groups of ``m`` snapshots are first
    averaged and the groups are tracked instead.
    """
    rows = np.asarray([ir.taps for ir in irs]) if not isinstance(irs, np.ndarray) else irs
    rows = np.atleast_2d(rows).astype(np.complex128, copy=False)
    if rows.shape[0] < 1:
        raise InvalidArgument("need at least one snapshot to track")
    rows = _group_mean(rows, int(pre_average))
    if ref_bin is None:
        ref_bin = int(np.argmax(np.abs(rows[0])))
    prom = _prominence_db(rows, ref_bin)
    if np.min(prom) < min_prominence_db:
        warnings.warn(
            f"main peak only {np.min(prom):.1f} dB above the snapshot floor; "
            "use longer sequences or pre-averaging",
            LowSnrTrackingWarning, stacklevel=2,
        )
    phases = np.angle(rows[:, ref_bin])
    corrected = rows * np.exp(-1j * phases)[:, None]
    return TrackingResult(phases, corrected, ref_bin)


def coherent_average(irs):
    """Complex mean across snapshots with compensated, order-fixed summation."""
    if isinstance(irs, np.ndarray):
        rows = np.atleast_2d(irs)
        meta = None
    else:
        irs = list(irs)
        if not irs:
            raise InvalidArgument("cannot average an empty snapshot set")
        meta = irs[0]
        rows = np.asarray([ir.taps for ir in irs])
    if rows.shape[0] == 0:
        raise InvalidArgument("cannot average an empty snapshot set")
    acc = _accel.CompensatedSum(rows.shape[1])
    acc.add(rows)
    mean = acc.mean()
    if meta is None:
        return mean
    return replace(meta, taps=mean)


# ---------------------------------------------------------------------------
# streaming pipeline

@dataclass
class ProcessingSettings:
    window: WindowSpec = field(default_factory=WindowSpec)
    track_phase: bool = True
    pre_average: int = 1
    n_avrg: int | None = None
    ref_bin: int | None = None

    def to_dict(self):
        return {"window": str(self.window), "track_phase": self.track_phase,
                "pre_average": self.pre_average, "n_avrg": self.n_avrg,
                "ref_bin": self.ref_bin}


@dataclass
class ProcessingResult:
    averaged_fr: FrequencyResponse      # calibrated (if a profile was given), unwindowed
    averaged_ir: ImpulseResponse        # windowed
    first_ir: ImpulseResponse           # first snapshot, same processing, no averaging
    phases_rad: np.ndarray
    ref_bin: int
    n_used: int
    warnings: list = field(default_factory=list)


class SnapshotProcessor:
    """Accumulates phase-tracked FRs chunk by chunk.

    Averaging happens in the frequency domain after calibration; each
    snapshot's phase is read off its windowed IR at ``ref_bin`` (taken from
    the first snapshot or group when not given).
    """

    def __init__(self, reference, calibration=None, settings=None):
        self.reference = reference
        self.grid = reference.grid
        self.cal = calibration
        self.settings = settings or ProcessingSettings()
        if calibration is not None and calibration.system_fr.grid != self.grid:
            raise InvalidArgument("calibration grid does not match the reference grid")
        self._ref_spec = reference_spectrum(reference)
        self._cal_bins = None if calibration is None else _regularized(calibration.system_fr.bins)
        self._window = self.settings.window.coefficients(self.grid.n_tones)
        self._acc = _accel.CompensatedSum(self.grid.n_tones)
        self._phases = []
        self._first = None
        self._leftover = None
        self.ref_bin = self.settings.ref_bin
        self.low_snr = False
        self._checked = False
        self.n_seen = 0

    def _fr(self, rows):
        bins = estimate_fr_bins(rows, self.reference, self._ref_spec)
        if self._cal_bins is not None:
            bins = bins / self._cal_bins
        return bins

    def add(self, rows):
        limit = self.settings.n_avrg
        rows = np.atleast_2d(rows)
        if limit is not None:
            rows = rows[: max(0, limit - self.n_seen)]
        if rows.shape[0] == 0:
            return
        self.n_seen += rows.shape[0]
        bins = self._fr(rows)
        if self._first is None:
            self._first = bins[0].copy()

        m = max(1, int(self.settings.pre_average))
        if m > 1:
            if self._leftover is not None:
                bins = np.concatenate([self._leftover, bins])
            usable = (bins.shape[0] // m) * m
            self._leftover = bins[usable:] if usable < bins.shape[0] else None
            bins = _group_mean(bins, m) if usable else bins[:0]
            if bins.shape[0] == 0:
                return

        windowed = bins * self._window
        if self.ref_bin is None:
            self.ref_bin = int(np.argmax(np.abs(ir_from_bins(windowed[0], self.grid)[0])))
        if self.settings.track_phase:
            # FFT rather than a BLAS dot product: BLAS rounding depends on
            # alignment, which would make the result depend on the chunking
            irs = ir_from_bins(windowed, self.grid)
            phases = np.angle(irs[:, self.ref_bin])
            if not self._checked:
                # judged on the first snapshot (or group) only
                prom = _prominence_db(irs[:1], self.ref_bin)
                self.low_snr = bool(prom[0] < TRACKING_MIN_PROMINENCE_DB)
                self._checked = True
            bins = bins * np.exp(-1j * phases)[:, None]
        else:
            phases = np.zeros(bins.shape[0])
        self._phases.append(phases)
        self._acc.add(bins)

    def result(self):
        if self._acc.count == 0:
            raise InvalidArgument("no snapshots were processed")
        notes = []
        if self.low_snr:
            msg = "main peak prominence below 6 dB; phase tracking unreliable"
            warnings.warn(msg, LowSnrTrackingWarning, stacklevel=2)
            notes.append(msg)
        mean = self._acc.mean()
        calibrated = self.cal is not None
        avg_fr = FrequencyResponse(mean, self.grid)
        step = 1.0 / self.grid.sample_rate_hz
        avg_ir = ImpulseResponse(ir_from_bins(mean * self._window, self.grid)[0], step, 0.0, calibrated)
        first_ir = ImpulseResponse(ir_from_bins(self._first * self._window, self.grid)[0], step, 0.0,
                                   calibrated)
        return ProcessingResult(avg_fr, avg_ir, first_ir, np.concatenate(self._phases),
                                self.ref_bin, self._acc.count * max(1, int(self.settings.pre_average)),
                                notes)


def process_snapshots(chunks, reference, calibration=None, settings=None):
    """Run :class:`SnapshotProcessor` over an iterable of snapshot blocks."""
    proc = SnapshotProcessor(reference, calibration, settings)
    if isinstance(chunks, np.ndarray):
        chunks = [chunks]
    for block in chunks:
        proc.add(block)
        if proc.settings.n_avrg is not None and proc.n_seen >= proc.settings.n_avrg:
            break
    return proc.result()


def build_calibration(chunks, reference, reference_loss_db=0.0, track=True, pre_average=1,
                      n_avrg=None, window=None):
    """Average a back-to-back capture into a :class:`CalibrationProfile`.

    The window is only used to locate and phase the main peak; the stored
    system response itself is unwindowed.
    """
    settings = ProcessingSettings(window=window or WindowSpec(), track_phase=track,
                                  pre_average=pre_average, n_avrg=n_avrg)
    res = process_snapshots(chunks, reference, None, settings)
    p = np.abs(res.averaged_ir.taps) ** 2
    n = p.size
    idx = np.arange(n)
    dist = np.minimum((idx - res.ref_bin) % n, (res.ref_bin - idx) % n)
    floor = float(10.0 * np.log10(np.mean(p[dist > 20]) / p[res.ref_bin]))
    return make_calibration_profile(res.averaged_fr, res.n_used, reference_loss_db, floor)
