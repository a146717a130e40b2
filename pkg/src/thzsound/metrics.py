"""Peak, noise-floor, dynamic-range and MMPL extraction from an IR."""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _accel
from .airsim import C0
from .errors import InsufficientNoiseRegion, InvalidArgument

FLOOR_SENTINEL_DB = -300.0
DEFAULT_GUARD_BINS = 20
DEFAULT_PROMINENCE_DB = 6.0


def delay_to_distance(delay_s):
    if delay_s < 0:
        raise InvalidArgument("delay must be >= 0")
    return C0 * delay_s


def _db(p):
    with np.errstate(divide="ignore"):
        return np.maximum(10.0 * np.log10(p), FLOOR_SENTINEL_DB)


@dataclass(frozen=True)
class Mpc:
    delay_s: float
    relative_power_db: float
    distance_m: float
    is_main: bool
    level_db: float
    bin_index: int

    def to_dict(self):
        return asdict(self)


def _circular_distance(idx, centres, n):
    idx = np.asarray(idx)[:, None]
    centres = np.asarray(centres)[None, :]
    d = np.abs(idx - centres) % n
    return np.minimum(d, n - d).min(axis=1)


def _guard_mask(n, centres, guard_bins):
    """True for bins inside any guard window."""
    if len(centres) == 0:
        return np.zeros(n, dtype=bool)
    return _circular_distance(np.arange(n), centres, n) <= guard_bins


def _interpolate(pdb, m):
    """Parabolic vertex through the three log-power bins around ``m``."""
    n = pdb.size
    a, b, c = pdb[(m - 1) % n], pdb[m], pdb[(m + 1) % n]
    denom = a - 2.0 * b + c
    if denom >= 0 or not np.isfinite(denom):
        return 0.0, b
    delta = float(np.clip(0.5 * (a - c) / denom, -1.0, 1.0))
    return delta, float(b - 0.25 * (a - c) * delta)


def _taps(ir):
    return ir.taps if hasattr(ir, "taps") else np.asarray(ir)


def _step(ir):
    return getattr(ir, "delay_step_s", 1.0)


def _bin_of(ir, item):
    if isinstance(item, Mpc):
        return item.bin_index
    return int(round(float(item) / _step(ir))) % _taps(ir).size


def _make_mpc(ir, m, pdb, main_level):
    delta, level = _interpolate(pdb, m)
    delay = (m + delta) * _step(ir) + getattr(ir, "t0_offset_s", 0.0)
    return Mpc(
        delay_s=float(delay),
        relative_power_db=float(level - main_level),
        distance_m=float(C0 * delay),
        is_main=False,
        level_db=float(level),
        bin_index=int(m),
    )


def _floor_linear(p, exclude_bins, guard_bins):
    mask = ~_guard_mask(p.size, exclude_bins, guard_bins)
    if mask.sum() < 0.1 * p.size:
        raise InsufficientNoiseRegion(
            f"only {mask.sum()} of {p.size} bins remain outside the guard windows"
        )
    return float(np.mean(p[mask]))


def detect_peaks(ir, min_prominence_db=DEFAULT_PROMINENCE_DB, guard_bins=DEFAULT_GUARD_BINS,
                 max_iter=10):
    """Local maxima standing ``min_prominence_db`` above the noise floor.

    The floor and the peak set are refined together: the floor is measured
    outside the guard windows of the current peaks, then peaks are re-picked
    against it until the set stops changing. Peaks closer than
    ``guard_bins`` to a stronger peak are suppressed. Returns MPCs sorted by
    delay with the strongest flagged ``is_main``.
    """
    taps = _taps(ir)
    if taps.size == 0:
        raise InvalidArgument("empty impulse response")
    p = np.abs(taps) ** 2
    n = p.size
    pdb = _db(p)
    if not np.any(p > 0):
        return []
    maxima = _accel.local_maxima(p)
    if maxima.size == 0:
        maxima = np.array([int(np.argmax(p))])
    # strongest first; stable sort keeps earlier delay first on ties
    order = maxima[np.argsort(-p[maxima], kind="stable")]
    main = int(order[0])

    picked = [main]
    for _ in range(max_iter):
        try:
            floor = _floor_linear(p, picked, guard_bins)
        except InsufficientNoiseRegion:
            floor = float(np.mean(p))
        thresh = floor * 10.0 ** (min_prominence_db / 10.0)
        new = []
        for m in order:
            if p[m] <= thresh:
                break
            if new and _circular_distance([m], new, n)[0] < guard_bins:
                continue
            new.append(int(m))
        if sorted(new) == sorted(picked):
            break
        picked = new or [main]
    if p[main] <= thresh:
        return []

    main_level = _interpolate(pdb, main)[1]
    mpcs = []
    for m in sorted(picked):
        mpc = _make_mpc(ir, m, pdb, main_level)
        if m == main:
            mpc = Mpc(mpc.delay_s, 0.0, mpc.distance_m, True, mpc.level_db, m)
        mpcs.append(mpc)
    return mpcs


def main_peak(ir):
    p = np.abs(_taps(ir)) ** 2
    m = int(np.argmax(p))
    mpc = _make_mpc(ir, m, _db(p), 0.0)
    return Mpc(mpc.delay_s, 0.0, mpc.distance_m, True, mpc.level_db, m)


def noise_floor(ir, exclusions=(), guard_bins=DEFAULT_GUARD_BINS, reference="peak"):
    """Mean noise power outside the guard windows of ``exclusions``, in dB.

    ``reference="peak"`` reports relative to the main-peak bin power;
    ``reference="scale"`` reports on the IR's own scale (path-loss
    referenced for calibrated IRs). The main peak is always excluded.
    """
    if reference not in ("peak", "scale"):
        raise InvalidArgument(f"unknown reference {reference!r}")
    p = np.abs(_taps(ir)) ** 2
    main = int(np.argmax(p))
    centres = {main} | {_bin_of(ir, e) for e in exclusions}
    floor = _floor_linear(p, sorted(centres), guard_bins)
    if floor <= 0.0:
        return FLOOR_SENTINEL_DB
    if reference == "scale":
        return float(_db(floor))
    return float(max(10.0 * np.log10(floor / p[main]), FLOOR_SENTINEL_DB))


def largest_spurious_maximum(ir, known_paths=(), guard_bins=DEFAULT_GUARD_BINS):
    """(delay_s, level_db) of the strongest local maximum outside all path guards."""
    taps = _taps(ir)
    p = np.abs(taps) ** 2
    n = p.size
    main = int(np.argmax(p))
    centres = sorted({main} | {_bin_of(ir, k) for k in known_paths})
    outside = ~_guard_mask(n, centres, guard_bins)
    if not np.any(outside):
        raise InvalidArgument("no bins outside the known-path guard windows")
    maxima = _accel.local_maxima(p)
    cand = maxima[outside[maxima]] if maxima.size else maxima
    pdb = _db(p)
    if cand.size == 0:
        # flat region: fall back to the largest remaining bin
        m = int(np.flatnonzero(outside)[np.argmax(p[outside])])
        return m * _step(ir), float(pdb[m])
    m = int(cand[np.argmax(p[cand])])
    if p[m] == 0.0:
        return m * _step(ir), FLOOR_SENTINEL_DB
    delta, level = _interpolate(pdb, m)
    return (m + delta) * _step(ir), level


def dynamic_range(ir, known_paths=(), guard_bins=DEFAULT_GUARD_BINS):
    """Main-peak level minus the largest maximum not caused by a known path."""
    main = main_peak(ir)
    _, spur = largest_spurious_maximum(ir, known_paths, guard_bins)
    return float(main.level_db - spur)


def mmpl(ir, reference_loss_db, known_paths=(), guard_bins=DEFAULT_GUARD_BINS):
    """Maximum measurable path loss of a calibrated IR.

    Levels are referenced so that the main path sits at ``-reference_loss_db``
    (the known inserted loss); the MMPL is minus the level of the largest
    spurious maximum on that scale.
    """
    if not getattr(ir, "calibrated", False):
        raise InvalidArgument("MMPL needs a calibrated impulse response")
    return float(reference_loss_db + dynamic_range(ir, known_paths, guard_bins))


@dataclass
class CirMetrics:
    main_peak: Mpc
    mpcs: list
    noise_floor_db: float
    noise_floor_rel_db: float
    dynamic_range_db: float
    mmpl_db: float | None
    spur: dict
    gain_budget: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {
            "main_peak": self.main_peak.to_dict(),
            "mpcs": [m.to_dict() for m in self.mpcs],
            "noise_floor_db": self.noise_floor_db,
            "noise_floor_rel_db": self.noise_floor_rel_db,
            "dynamic_range_db": self.dynamic_range_db,
            "mmpl_db": self.mmpl_db,
            "spur": self.spur,
            "gain_budget": self.gain_budget,
        }
        d.update(self.extra)
        return d


def compute_metrics(ir, reference_loss_db=None, known_paths=None,
                    guard_bins=DEFAULT_GUARD_BINS, min_prominence_db=DEFAULT_PROMINENCE_DB,
                    gain_budget=None):
    """Full metrics report for one IR.

    ``known_paths`` (delays in s or :class:`Mpc`) come from simulation ground
    truth when given; otherwise the detected MPCs are used.
    """
    mpcs = detect_peaks(ir, min_prominence_db, guard_bins)
    main = main_peak(ir)
    paths = list(known_paths) if known_paths is not None else mpcs
    spur_delay, spur_level = largest_spurious_maximum(ir, paths, guard_bins)
    dr = float(main.level_db - spur_level)
    mm = None
    if reference_loss_db is not None and getattr(ir, "calibrated", False):
        mm = float(reference_loss_db + dr)
    return CirMetrics(
        main_peak=main,
        mpcs=mpcs,
        noise_floor_db=noise_floor(ir, mpcs, guard_bins, reference="scale"),
        noise_floor_rel_db=noise_floor(ir, mpcs, guard_bins, reference="peak"),
        dynamic_range_db=dr,
        mmpl_db=mm,
        spur={"delay_s": float(spur_delay), "level_db": float(spur_level)},
        gain_budget=gain_budget.to_dict() if hasattr(gain_budget, "to_dict") else gain_budget,
    )


def write_metrics_json(path, metrics):
    with open(path, "w") as fh:
        json.dump(metrics.to_dict() if hasattr(metrics, "to_dict") else metrics, fh, indent=2)


def write_cir_csv(path, ir):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delay_ns", "power_db"])
        for d, p in zip(ir.delays_s * 1e9, ir.power_db):
            writer.writerow([f"{d:.6f}", f"{p:.4f}"])
