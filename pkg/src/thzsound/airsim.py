"""Propagation, link budget and capture-impairment simulation.

A capture is built per snapshot as::

    tx     = DAC(waveform) [+ in-band Tx spurs]
    y_i    = IFFT( FFT(tx) * H_channel * H_chain * jitter_i ) * exp(j*drift_i)
    r_i    = ADC(y_i + noise_i)

Every snapshot draws its jitter and noise from its own RNG stream keyed by
``(seed, snapshot_index)``, so chunked, threaded and serial runs give the same
bits.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _accel
from .errors import InvalidArgument
from .waveform import Waveform

C0 = 299_792_458.0
# rounded speed of light used for link-budget arithmetic (FSPL tables)
C_LINK_BUDGET = 3.0e8

# RNG stream tags
_STREAM_SNAPSHOT = 1
_STREAM_DRIFT = 2


def fspl_db(distance_m, frequency_hz, c=C_LINK_BUDGET):
    """Free-space path loss ``20*log10(4*pi*d*f/c)``.

    Uses the rounded ``c = 3e8`` by default, as link budgets usually do; pass
    ``c=C0`` for the exact value (0.0087 dB more).
    """
    if distance_m <= 0 or frequency_hz <= 0:
        raise InvalidArgument("distance and frequency must be positive")
    return float(20.0 * np.log10(4.0 * np.pi * distance_m * frequency_hz / c))


def estimate_antenna_gain(s21_db, distance_m, frequency_hz, feed_loss_db=0.0):
    """Boresight gain of each of two identical antennas from a measured S21.

    The excess of S21 over free-space loss is split equally between the two
    antennas; ``feed_loss_db`` adds back a known per-antenna feed loss.
    """
    return (fspl_db(distance_m, frequency_hz) + s21_db) / 2.0 + feed_loss_db


def expected_s21_db(gain_dbi, distance_m, frequency_hz, feed_loss_db=0.0):
    """Inverse of :func:`estimate_antenna_gain`."""
    return 2.0 * (gain_dbi - feed_loss_db) - fspl_db(distance_m, frequency_hz)


@dataclass(frozen=True)
class ChannelTap:
    delay_s: float
    gain_db: float
    phase_rad: float = 0.0
    # artifact taps are not propagation paths (e.g. a receiver spur)
    artifact: bool = False

    def __post_init__(self):
        if self.delay_s < 0:
            raise InvalidArgument(f"tap delay must be >= 0, got {self.delay_s}")
        if not np.isfinite(self.gain_db):
            raise InvalidArgument("tap gain must be finite")

    @property
    def amplitude(self):
        return 10.0 ** (self.gain_db / 20.0) * np.exp(1j * self.phase_rad)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(
            float(d["delay_s"]),
            float(d["gain_db"]),
            float(d.get("phase_rad", 0.0)),
            bool(d.get("artifact", False)),
        )


def back_to_back_channel(attenuation_db):
    if attenuation_db < 0:
        raise InvalidArgument("attenuation must be >= 0")
    return [ChannelTap(0.0, -float(attenuation_db), 0.0)]


def _signed_freqs(n, sample_rate_hz):
    return np.fft.fftfreq(n, d=1.0 / sample_rate_hz)


def channel_response(taps, n, sample_rate_hz):
    """Frequency response of a tap list on an ``n``-point periodic grid."""
    if not taps:
        raise InvalidArgument("no propagation path defined")
    period = n / sample_rate_hz
    f = _signed_freqs(n, sample_rate_hz)
    h = np.zeros(n, dtype=np.complex128)
    for tap in taps:
        if tap.delay_s >= period:
            raise InvalidArgument(
                f"tap delay {tap.delay_s:g} s is not shorter than the period {period:g} s"
            )
        h += tap.amplitude * np.exp(-2j * np.pi * f * tap.delay_s)
    return h


def apply_channel(w, taps, sample_rate_hz=None):
    """Circularly convolve one period with the tapped delay line."""
    if isinstance(w, Waveform):
        x, fs = w.samples, w.grid.sample_rate_hz
    else:
        x, fs = np.asarray(w, dtype=np.complex128), sample_rate_hz
        if fs is None:
            raise InvalidArgument("sample_rate_hz is required for raw sample vectors")
    h = channel_response(taps, x.size, fs)
    return np.fft.ifft(np.fft.fft(x) * h)


@dataclass(frozen=True)
class PhaseDrift:
    model: str = "none"
    span_deg: float = 0.0

    def __post_init__(self):
        if self.model not in ("none", "wiener", "linear", "sinusoidal"):
            raise InvalidArgument(f"unknown drift model {self.model!r}")


@dataclass(frozen=True)
class ImpairmentConfig:
    """Capture impairments.

    ``snr_db_per_snapshot`` is the ratio of main-path IR power to mean noise
    power per IR bin after calibration, without a window, for one snapshot.
    ``None`` disables noise. ``system_tilt_db`` and ``system_delay_s``
    describe the Tx/Rx chain response that back-to-back calibration removes;
    ``trigger_offset_ps`` is an extra fixed trigger offset of this capture.
    """

    snr_db_per_snapshot: float | None = None
    drift: PhaseDrift = field(default_factory=PhaseDrift)
    trigger_jitter_ps_rms: float = 0.0
    trigger_offset_ps: float = 0.0
    adc_bits_tx: int | None = 14
    adc_bits_rx: int | None = 16
    system_tilt_db: float = 0.0
    system_delay_s: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for bits in (self.adc_bits_tx, self.adc_bits_rx):
            if bits is not None and bits < 1:
                raise InvalidArgument("converter resolution must be >= 1 bit")
        if self.trigger_jitter_ps_rms < 0:
            raise InvalidArgument("jitter must be >= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        drift = d.pop("drift", None) or d.pop("phase_drift", None) or {}
        if "magnitude_deg_over_measurement" in drift:
            drift = {"model": drift.get("model", "wiener"),
                     "span_deg": drift["magnitude_deg_over_measurement"]}
        known = {k: d[k] for k in (
            "snr_db_per_snapshot", "trigger_jitter_ps_rms", "trigger_offset_ps",
            "adc_bits_tx", "adc_bits_rx", "system_tilt_db", "system_delay_s",
            "seed") if k in d}
        return cls(drift=PhaseDrift(**drift), **known)


@dataclass
class SnapshotSet:
    data: np.ndarray
    sample_rate_hz: float
    origin: str = "simulated"
    seed: int | None = None
    scenario: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.atleast_2d(self.data)
        if self.data.shape[0] < 1:
            raise InvalidArgument("a snapshot set needs at least one snapshot")

    @property
    def n_snapshots(self):
        return self.data.shape[0]

    @property
    def n_samples(self):
        return self.data.shape[1]


def chain_response(grid, tilt_db=0.0, delay_s=0.0):
    """Linear-in-dB magnitude tilt across the band plus a bulk delay.

    The tilt is centred so the band-average power gain is 0 dB.
    """
    n, fs = grid.n_samples, grid.sample_rate_hz
    f = _signed_freqs(n, fs)
    slope = tilt_db / grid.bandwidth_hz
    mag_db = slope * f
    mag = 10.0 ** (mag_db / 20.0)
    active = grid.active_bins
    mag /= np.sqrt(np.mean(mag[active] ** 2))
    return mag * np.exp(-2j * np.pi * f * delay_s)


def noise_variance_for_snr(tx_spectrum, response, main_amplitude, snr_db, n_samples, window=None):
    """Per-sample complex noise variance giving ``snr_db`` in the calibrated IR.

    ``tx_spectrum`` and ``response`` are the transmitted spectrum and the
    chain response on the active bins. The calibrated IR is
    ``h[m] = mean_k(w_k * Y_k / (X_k * G_k) * exp(...))``; white noise of
    variance ``s2`` per sample puts ``n * s2`` into every DFT bin, so
    ``var(h) = n * s2 / N**2 * sum_k w_k**2 / |X_k G_k|**2``.
    """
    tx_spectrum = np.asarray(tx_spectrum)
    n_active = tx_spectrum.size
    w2 = np.ones(n_active) if window is None else np.asarray(window) ** 2
    denom = np.abs(tx_spectrum * response) ** 2
    per_s2 = n_samples * np.sum(w2 / denom) / n_active ** 2
    target_var = abs(main_amplitude) ** 2 / 10.0 ** (snr_db / 10.0)
    return float(target_var / per_s2)


def snr_for_floor(main_level_db, floor_db):
    """Per-snapshot SNR for a main path at ``main_level_db`` over ``floor_db``."""
    return float(main_level_db - floor_db)


def drift_path(drift, n_snapshots, seed):
    """Phase (rad) of each snapshot for the configured drift process."""
    span = np.deg2rad(drift.span_deg)
    if drift.model == "none" or span == 0.0 or n_snapshots == 1:
        return np.zeros(n_snapshots)
    i = np.arange(n_snapshots)
    if drift.model == "linear":
        return span * i / (n_snapshots - 1)
    if drift.model == "sinusoidal":
        return 0.5 * span * np.sin(2.0 * np.pi * i / n_snapshots)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_STREAM_DRIFT,)))
    path = np.concatenate([[0.0], np.cumsum(rng.standard_normal(n_snapshots - 1))])
    width = np.ptp(path)
    return path * (span / width) if width > 0 else path


def _snapshot_rng(seed, index):
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(_STREAM_SNAPSHOT, int(index)))
    )


def _quantize_complex(x, bits, full_scale):
    re = _accel.quantize_midrise(x.real, bits, full_scale)
    im = _accel.quantize_midrise(x.imag, bits, full_scale)
    return re + 1j * im


def _spur_signal(tx, spurs, sample_rate_hz):
    n = tx.size
    t = np.arange(n) / sample_rate_hz
    extra = np.zeros(n, dtype=np.complex128)
    ref_amp = np.sqrt(np.mean(np.abs(tx) ** 2))
    for sp in spurs:
        amp = 10.0 ** (sp.level_db / 20.0)
        rot = np.exp(2j * np.pi * sp.offset_hz * t)
        if sp.kind == "image":
            env = np.conj(tx) if sp.conjugate else tx
            extra += amp * env * rot
        else:
            extra += amp * ref_amp * rot
    return extra


class CaptureSimulator:
    """Generates snapshots of one scenario; see :func:`simulate_capture`.

    ``noise_var`` overrides the SNR-derived noise variance, which lets a
    calibration capture share the measurement's absolute noise level.
    """

    def __init__(self, w, taps, imp, n_snapshots, spurs=(), noise_var=None):
        if n_snapshots < 1:
            raise InvalidArgument("n_snapshots must be >= 1")
        if not taps:
            raise InvalidArgument("no propagation path defined")
        grid = w.grid
        self.grid = grid
        self.imp = imp
        self.n_snapshots = int(n_snapshots)
        n, fs = grid.n_samples, grid.sample_rate_hz

        tx = np.asarray(w.samples)
        if imp.adc_bits_tx:
            tx = _quantize_complex(tx, imp.adc_bits_tx, 1.0)
        if spurs:
            tx = tx + _spur_signal(tx, spurs, fs)
        self.tx = tx

        h = channel_response(taps, n, fs)
        chain = chain_response(grid, imp.system_tilt_db,
                               imp.system_delay_s + imp.trigger_offset_ps * 1e-12)
        self._tx_spec = np.fft.fft(tx)
        self._rx_spec = self._tx_spec * h * chain
        self.clean = np.fft.ifft(self._rx_spec)
        self._freqs = _signed_freqs(n, fs)

        paths = [t for t in taps if not t.artifact] or list(taps)
        self.main_amplitude = max(abs(t.amplitude) for t in paths)
        if noise_var is not None:
            self.noise_var = float(noise_var)
        elif imp.snr_db_per_snapshot is None:
            self.noise_var = 0.0
        else:
            active = grid.active_bins
            self.noise_var = noise_variance_for_snr(
                np.fft.fft(w.samples)[active], chain[active],
                self.main_amplitude, imp.snr_db_per_snapshot, n,
            )
        self.phases = drift_path(imp.drift, self.n_snapshots, imp.seed)

        # Rx converter gain: clean peak plus 5 sigma of noise sits at 0.9 FS
        sigma = np.sqrt(self.noise_var / 2.0)
        peak = max(np.max(np.abs(self.clean.real)), np.max(np.abs(self.clean.imag)))
        self.rx_scale = (peak + 5.0 * sigma) / 0.9 if peak + sigma > 0 else 1.0

    def snapshots(self, start, stop):
        """Snapshots ``start..stop-1`` as a complex matrix."""
        imp = self.imp
        n = self.grid.n_samples
        count = stop - start
        out = np.empty((count, n), dtype=np.complex128)
        jitter = imp.trigger_jitter_ps_rms * 1e-12
        sigma = np.sqrt(self.noise_var / 2.0)
        for row, idx in enumerate(range(start, stop)):
            rng = _snapshot_rng(imp.seed, idx)
            dt = rng.standard_normal() * jitter
            noise = rng.standard_normal((2, n))
            if dt != 0.0:
                y = np.fft.ifft(self._rx_spec * np.exp(-2j * np.pi * self._freqs * dt))
            else:
                y = self.clean
            y = y * np.exp(1j * self.phases[idx])
            if sigma > 0:
                y = y + sigma * (noise[0] + 1j * noise[1])
            out[row] = y
        if imp.adc_bits_rx:
            out = _quantize_complex(out / self.rx_scale, imp.adc_bits_rx, 1.0) * self.rx_scale
        return out

    def chunks(self, chunk_size=1000, workers=None):
        """Yield consecutive snapshot blocks in index order."""
        bounds = [(s, min(s + chunk_size, self.n_snapshots))
                  for s in range(0, self.n_snapshots, chunk_size)]
        workers = workers or default_workers()
        if workers <= 1 or len(bounds) == 1:
            for s, e in bounds:
                yield self.snapshots(s, e)
            return
        with ThreadPoolExecutor(max_workers=workers) as pool:
            # bounded look-ahead keeps memory flat on long captures
            pending = []
            it = iter(bounds)
            for b in it:
                pending.append(pool.submit(self.snapshots, *b))
                if len(pending) >= 2 * workers:
                    break
            for b in it:
                yield pending.pop(0).result()
                pending.append(pool.submit(self.snapshots, *b))
            for fut in pending:
                yield fut.result()


def default_workers():
    env = os.environ.get("THZSOUND_NUM_THREADS")
    if env:
        return max(1, int(env))
    return 1


def simulate_capture(w, taps, imp, n_snapshots, spurs=(), noise_var=None, workers=None):
    """Simulate ``n_snapshots`` captured periods into a :class:`SnapshotSet`."""
    sim = CaptureSimulator(w, taps, imp, n_snapshots, spurs=spurs, noise_var=noise_var)
    data = np.concatenate(list(sim.chunks(workers=workers)), axis=0)
    return SnapshotSet(
        data=data,
        sample_rate_hz=w.grid.sample_rate_hz,
        origin="simulated",
        seed=imp.seed,
        scenario={"taps": [t.to_dict() for t in taps], "impairments": imp.to_dict()},
    )
