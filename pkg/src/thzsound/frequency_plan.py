"""Heterodyne frequency plan, spur placement and Tx power model.

Frequencies are held as integer Hz so plan arithmetic is exact. The Tx mixes
the IF up with ``lo_multiplier * tx_lo_ref`` (single sideband); the Rx mixes
down with ``lo_multiplier * rx_lo_ref`` in a double-sideband mixer, so any RF
component lands at ``|f_rf - f_rx_lo|`` in the receive IF.
"""

from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np
from scipy.optimize import least_squares

from .errors import FitFailed, InvalidArgument, PlanInfeasible

RF_RANGE_HZ = (270_000_000_000, 330_000_000_000)


class Sideband(str, Enum):
    UPPER = "upper"
    LOWER = "lower"


def _hz(value):
    value = float(value)
    if not np.isfinite(value):
        raise InvalidArgument(f"non-finite frequency {value!r}")
    return int(round(value))


@dataclass(frozen=True)
class FrequencyPlan:
    tx_if_hz: int
    tx_lo_ref_hz: int
    rx_lo_ref_hz: int
    lo_multiplier: int
    bandwidth_hz: int
    sideband: Sideband = Sideband.UPPER

    @property
    def tx_lo_hz(self):
        return self.lo_multiplier * self.tx_lo_ref_hz

    @property
    def rx_lo_hz(self):
        return self.lo_multiplier * self.rx_lo_ref_hz

    @property
    def tx_rf_center_hz(self):
        if self.sideband is Sideband.UPPER:
            return self.tx_lo_hz + self.tx_if_hz
        return self.tx_lo_hz - self.tx_if_hz

    @property
    def image_rf_hz(self):
        """Suppressed opposite sideband of the Tx mixer."""
        if self.sideband is Sideband.UPPER:
            return self.tx_lo_hz - self.tx_if_hz
        return self.tx_lo_hz + self.tx_if_hz

    @property
    def lo_leak_rf_hz(self):
        return self.tx_lo_hz

    @property
    def rx_if_center_hz(self):
        return self.tx_rf_center_hz - self.rx_lo_hz

    def rx_if_of(self, rf_hz):
        return abs(rf_hz - self.rx_lo_hz)

    def to_dict(self):
        d = asdict(self)
        d["sideband"] = self.sideband.value
        return d

    @classmethod
    def from_dict(cls, d):
        return derive_plan(
            d["tx_if_hz"],
            d["tx_lo_ref_hz"],
            d["rx_lo_ref_hz"],
            d.get("lo_multiplier", 36),
            d["bandwidth_hz"],
            d.get("sideband", "upper"),
        )


def derive_plan(tx_if, tx_lo_ref, rx_lo_ref, multiplier=36, bandwidth=2e9, sideband="upper"):
    vals = [_hz(v) for v in (tx_if, tx_lo_ref, rx_lo_ref, bandwidth)]
    if any(v <= 0 for v in vals) or int(multiplier) <= 0:
        raise InvalidArgument("all plan frequencies and the multiplier must be > 0")
    plan = FrequencyPlan(vals[0], vals[1], vals[2], int(multiplier), vals[3], Sideband(sideband))
    rf = plan.tx_rf_center_hz
    if not RF_RANGE_HZ[0] <= rf <= RF_RANGE_HZ[1]:
        raise PlanInfeasible(f"Tx RF centre {rf / 1e9:g} GHz is outside 270-330 GHz")
    if plan.rx_if_center_hz <= plan.bandwidth_hz / 2:
        raise PlanInfeasible(
            f"Rx IF centre {plan.rx_if_center_hz / 1e9:g} GHz does not clear "
            f"half the bandwidth ({plan.bandwidth_hz / 2e9:g} GHz)"
        )
    return plan


@dataclass(frozen=True)
class SpurReport:
    lo_leak_rx_if_hz: int
    image_rx_if_hz: int
    signal_band_rx_if: tuple
    clear: bool
    margins_hz: dict

    def to_dict(self):
        d = asdict(self)
        d["signal_band_rx_if"] = list(self.signal_band_rx_if)
        return d


def _interval_gap(a, b):
    """Distance between two closed intervals; negative means overlap."""
    return max(a[0] - b[1], b[0] - a[1])


def check_spurs(plan):
    """Locate the Tx LO leak and sideband image in the receive IF.

    The LO leak is a single tone; the image occupies a full signal bandwidth.
    A margin is the distance from the spur (band) to the nearest edge of the
    signal band, negative when they overlap.
    """
    half = plan.bandwidth_hz // 2
    centre = plan.rx_if_center_hz
    band = (centre - half, centre + half)

    leak_if = plan.rx_if_of(plan.lo_leak_rf_hz)
    image_lo = plan.rx_if_of(plan.image_rf_hz - half)
    image_hi = plan.rx_if_of(plan.image_rf_hz + half)
    image_band = (min(image_lo, image_hi), max(image_lo, image_hi))
    # a band straddling the Rx LO folds onto [0, max]
    if (plan.image_rf_hz - half) < plan.rx_lo_hz < (plan.image_rf_hz + half):
        image_band = (0, image_band[1])

    margins = {
        "lo_leak": _interval_gap((leak_if, leak_if), band),
        "image": _interval_gap(image_band, band),
    }
    clear = all(m > 0 for m in margins.values())
    return SpurReport(
        lo_leak_rx_if_hz=leak_if,
        image_rx_if_hz=plan.rx_if_of(plan.image_rf_hz),
        signal_band_rx_if=band,
        clear=clear,
        margins_hz=margins,
    )


@dataclass(frozen=True)
class PowerModel:
    """Smooth-limiter (Rapp-type) Tx output model in dBm.

    ``signal = in + g - (10/s) * log10(1 + 10**(s * (in + g - p_sat) / 10))``
    """

    small_signal_gain_db: float
    saturation_power_dbm: float
    knee_sharpness: float
    lo_leak_dbm: float = -10.3
    sideband_suppression_db: float = 15.0

    def signal_dbm(self, if_dbm):
        lin = np.asarray(if_dbm, dtype=float) + self.small_signal_gain_db
        s = self.knee_sharpness
        with np.errstate(over="ignore"):
            excess = s * (lin - self.saturation_power_dbm) / 10.0
            # log10(1 + 10**x) without overflow for large x
            soft = np.where(excess > 30, excess, np.log10(1.0 + 10.0 ** np.minimum(excess, 30)))
        out = lin - (10.0 / s) * soft
        return float(out) if np.ndim(out) == 0 else out

    def compression_db(self, if_dbm):
        lin = np.asarray(if_dbm, dtype=float) + self.small_signal_gain_db
        out = lin - self.signal_dbm(if_dbm)
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(d[k]) for k in (
            "small_signal_gain_db", "saturation_power_dbm", "knee_sharpness",
            "lo_leak_dbm", "sideband_suppression_db") if k in d})


NOMINAL_POWER_POINTS = ((-3.0, -5.3), (0.0, -2.9))
NOMINAL_COMPRESSION_DB = (1.7, 2.5)

# surrogate for "no compression observed": saturation far above any drive
_PSAT_MAX = 200.0


def fit_power_model(
    points,
    compression_db=None,
    small_signal_limit=(-15.0, 0.3),
    lo_leak_dbm=-10.3,
    sideband_suppression_db=15.0,
):
    """Least-squares fit of :class:`PowerModel` to measured (IF, RF) points.

    ``compression_db`` optionally gives the measured compression at each
    point. ``small_signal_limit = (if_dbm, max_compression_db)`` enforces the
    observation that the output is still nearly linear at that drive; it acts
    as a one-sided penalty.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise FitFailed("need at least two (if_dbm, rf_dbm) points")
    if not np.all(np.isfinite(pts)):
        raise FitFailed("non-finite power points")
    if np.unique(pts[:, 0]).size != pts.shape[0]:
        raise FitFailed("IF drive levels must be distinct")
    comp = None if compression_db is None else np.asarray(compression_db, dtype=float)
    if comp is not None and comp.shape != (pts.shape[0],):
        raise FitFailed("one compression value per point is required")

    x_in, y_out = pts[:, 0], pts[:, 1]

    def model(theta):
        g, psat, s = theta
        return PowerModel(g, psat, s, lo_leak_dbm, sideband_suppression_db)

    def residuals(theta):
        m = model(theta)
        r = [10.0 * (m.signal_dbm(x_in) - y_out)]
        if comp is not None:
            r.append(m.compression_db(x_in) - comp)
        if small_signal_limit is not None:
            c = m.compression_db(small_signal_limit[0])
            r.append([100.0 * max(0.0, c - 0.95 * small_signal_limit[1])])
        return np.concatenate([np.atleast_1d(v) for v in r])

    g0 = float(np.max(y_out - x_in))
    best = None
    starts = [[g0, float(np.max(y_out)) + 6.0, s0] for s0 in (0.5, 1.0, 2.0, 4.0)]
    starts.append([g0, float(np.max(y_out)) + 60.0, 2.0])
    for start in starts:
        try:
            sol = least_squares(
                residuals, start,
                bounds=([-60.0, -60.0, 0.1], [60.0, _PSAT_MAX, 20.0]),
                xtol=1e-12, ftol=1e-12, gtol=1e-12,
            )
        except ValueError as exc:  # pragma: no cover
            raise FitFailed(str(exc)) from exc
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None or not np.all(np.isfinite(best.x)):
        raise FitFailed("power model fit did not converge")
    return model(best.x)


@dataclass(frozen=True)
class RfBreakdown:
    signal_dbm: float
    lo_leak_dbm: float
    image_dbm: float
    sum_dbm: float

    def to_dict(self):
        return asdict(self)


def power_sum_dbm(*levels_dbm):
    with np.errstate(divide="ignore"):
        total = sum(10.0 ** (np.asarray(v, dtype=float) / 10.0) for v in levels_dbm)
        return float(10.0 * np.log10(total))


def rf_output(if_dbm, model):
    signal = model.signal_dbm(if_dbm) if np.isfinite(if_dbm) else -np.inf
    image = signal - model.sideband_suppression_db
    return RfBreakdown(
        signal_dbm=signal,
        lo_leak_dbm=model.lo_leak_dbm,
        image_dbm=image,
        sum_dbm=power_sum_dbm(signal, model.lo_leak_dbm, image),
    )


@dataclass(frozen=True)
class Spur:
    """A Tx spur that falls inside the receive band.

    ``offset_hz`` is relative to the receive band centre; ``level_db`` is
    relative to the wanted signal; ``kind`` is "lo_leak" or "image".
    ``conjugate`` marks an image whose complex envelope arrives mirrored.
    """

    kind: str
    offset_hz: float
    level_db: float
    conjugate: bool = False


def inband_spurs(plan, model, if_dbm):
    """Spurs that :func:`check_spurs` places inside the signal band."""
    report = check_spurs(plan)
    out = []
    signal = model.signal_dbm(if_dbm)
    centre = plan.rx_if_center_hz
    if report.margins_hz["lo_leak"] <= 0:
        out.append(Spur("lo_leak", float(report.lo_leak_rx_if_hz - centre),
                        model.lo_leak_dbm - signal))
    if report.margins_hz["image"] <= 0:
        below_rx_lo = plan.image_rf_hz < plan.rx_lo_hz
        # the Tx image envelope is itself mirrored; folding below the Rx LO undoes that
        out.append(Spur("image", float(report.image_rx_if_hz - centre),
                        -model.sideband_suppression_db, conjugate=not below_rx_lo))
    return out
