"""Scenario files: loading, validation and the end-to-end run.

A scenario bundles the waveform grid, frequency plan, power model, channel
taps, impairments and processing settings of one experiment, plus optional
``expected_metrics`` checked after the run.
"""

import functools
import json
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import fileio, metrics
from .airsim import (
    CaptureSimulator,
    ChannelTap,
    ImpairmentConfig,
    back_to_back_channel,
    chain_response,
    noise_variance_for_snr,
)
from .errors import InvalidArgument
from .frequency_plan import (
    NOMINAL_COMPRESSION_DB,
    NOMINAL_POWER_POINTS,
    PowerModel,
    check_spurs,
    derive_plan,
    fit_power_model,
    inband_spurs,
    rf_output,
)
from .sounding_dsp import (
    ProcessingSettings,
    WindowSpec,
    build_calibration,
    gain_budget,
    process_snapshots,
)
from .waveform import CrestOptConfig, ToneGrid, fzc_waveform, optimize_crest

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_METRIC_FAILURE = 1
EXIT_INVALID = 2

DESK_N_AVRG = 1000
FULL_N_AVRG = 50_000


class ScenarioError(InvalidArgument):
    """Scenario failed to parse or validate."""


@functools.lru_cache(maxsize=1)
def schema():
    text = resources.files("thzsound.scenarios").joinpath("scenario.schema.json").read_text()
    return json.loads(text)


def shipped_scenarios():
    """Names of the scenarios installed with the package."""
    root = resources.files("thzsound.scenarios")
    return sorted(p.name[:-5] for p in root.iterdir()
                  if p.name.endswith(".json") and not p.name.endswith(".schema.json"))


def shipped_path(name):
    """Path of a shipped scenario, by name with or without ``.json``."""
    name = name if name.endswith(".json") else name + ".json"
    path = resources.files("thzsound.scenarios").joinpath(name)
    if not path.is_file():
        raise ScenarioError(f"no shipped scenario {name!r}")
    return Path(str(path))


@dataclass
class Scenario:
    name: str
    raw: dict
    grid: ToneGrid
    taps: list
    impairments: ImpairmentConfig
    settings: ProcessingSettings
    single_snapshot_floor_db: float | None = None
    plan: object = None
    power_model: PowerModel | None = None
    if_drive_dbm: float | None = None
    calibration_attenuation_db: float = 0.0
    noiseless_calibration: bool = False
    n_avrg_full: int = FULL_N_AVRG
    guard_bins: int = metrics.DEFAULT_GUARD_BINS
    min_prominence_db: float = metrics.DEFAULT_PROMINENCE_DB
    known_paths_mode: str = "ground_truth"
    reference_loss_db: float | None = None
    expected: dict = field(default_factory=dict)
    optimize_cf: bool = True
    root: int = 1

    @property
    def path_taps(self):
        return [t for t in self.taps if not t.artifact]

    @property
    def n_avrg(self):
        return self.settings.n_avrg


def validate(data):
    """Raise :class:`ScenarioError` unless ``data`` matches the schema."""
    try:
        jsonschema.validate(data, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"{where}: {exc.message}") from None
    if not data["taps"]:
        raise ScenarioError("no propagation path defined")
    if not any(not t.get("artifact", False) for t in data["taps"]):
        raise ScenarioError("no propagation path defined (only artifact taps)")
    imp = data["impairments"]
    if "single_snapshot_floor_db" in imp and imp.get("snr_db_per_snapshot") is not None:
        raise ScenarioError("give either snr_db_per_snapshot or single_snapshot_floor_db")


def _power_model(d):
    if not d:
        return None, None
    extras = {k: d[k] for k in ("lo_leak_dbm", "sideband_suppression_db") if k in d}
    if "small_signal_gain_db" in d:
        model = PowerModel.from_dict(d)
    else:
        pts = d.get("fit_points", NOMINAL_POWER_POINTS)
        comp = d.get("compression_db", NOMINAL_COMPRESSION_DB if "fit_points" not in d else None)
        model = fit_power_model(pts, comp, **extras)
    return model, d.get("if_drive_dbm")


def from_dict(data):
    validate(data)
    wf = data["waveform"]
    try:
        grid = ToneGrid.from_bandwidth(wf["n_tones"], wf["bandwidth_hz"], wf["sample_rate_hz"])
        taps = [ChannelTap.from_dict({k: v for k, v in t.items() if k != "note"})
                for t in data["taps"]]
        imp_raw = dict(data["impairments"])
        floor = imp_raw.pop("single_snapshot_floor_db", None)
        imp = ImpairmentConfig.from_dict(imp_raw)
        plan = derive_plan(**{
            "tx_if": data["frequency_plan"]["tx_if_hz"],
            "tx_lo_ref": data["frequency_plan"]["tx_lo_ref_hz"],
            "rx_lo_ref": data["frequency_plan"]["rx_lo_ref_hz"],
            "multiplier": data["frequency_plan"].get("lo_multiplier", 36),
            "bandwidth": data["frequency_plan"]["bandwidth_hz"],
            "sideband": data["frequency_plan"].get("sideband", "upper"),
        }) if "frequency_plan" in data else None
        model, drive = _power_model(data.get("power_model"))
        proc = data["processing"]
        settings = ProcessingSettings(
            window=WindowSpec.parse(proc.get("window", "chebyshev:80")),
            track_phase=proc.get("track_phase", True),
            pre_average=proc.get("pre_average", 1),
            n_avrg=proc.get("n_avrg", DESK_N_AVRG),
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise ScenarioError(str(exc)) from exc
    cal = data.get("calibration", {})
    return Scenario(
        name=data["name"],
        raw=data,
        grid=grid,
        taps=taps,
        impairments=imp,
        settings=settings,
        single_snapshot_floor_db=floor,
        plan=plan,
        power_model=model,
        if_drive_dbm=drive,
        calibration_attenuation_db=cal.get("attenuation_db", 0.0),
        noiseless_calibration=cal.get("noiseless", False),
        n_avrg_full=proc.get("n_avrg_full", FULL_N_AVRG),
        guard_bins=proc.get("guard_bins", metrics.DEFAULT_GUARD_BINS),
        min_prominence_db=proc.get("min_prominence_db", metrics.DEFAULT_PROMINENCE_DB),
        known_paths_mode=proc.get("known_paths", "ground_truth"),
        reference_loss_db=proc.get("reference_loss_db"),
        expected=data.get("expected_metrics", {}),
        optimize_cf=wf.get("optimize_cf", True),
        root=wf.get("root", 1),
    )


def load(path):
    """Load and validate a scenario file (or a shipped scenario by name)."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = shipped_path(str(path))
    try:
        data = json.loads(Path(p).read_text())
    except FileNotFoundError:
        raise ScenarioError(f"scenario file {p} not found") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{p}: invalid JSON ({exc})") from None
    return from_dict(data)


@functools.lru_cache(maxsize=4)
def _cached_waveform(grid, root, optimize):
    w = fzc_waveform(grid, root)
    if optimize:
        w = optimize_crest(w, CrestOptConfig())
    return w


def build_waveform(sc):
    return _cached_waveform(sc.grid, sc.root, sc.optimize_cf)


def calibration_seed(seed):
    """Independent seed for the back-to-back capture of a scenario."""
    return int(np.random.SeedSequence([int(seed), 0xCA1]).generate_state(1)[0])


def spurs_of(sc):
    if sc.plan is None or sc.power_model is None or sc.if_drive_dbm is None:
        return []
    return inband_spurs(sc.plan, sc.power_model, sc.if_drive_dbm)


def measurement_noise_var(sc, w):
    """Absolute per-sample noise variance of the measurement capture."""
    imp = sc.impairments
    active = sc.grid.active_bins
    chain = chain_response(sc.grid, imp.system_tilt_db, imp.system_delay_s)[active]
    main_amp = max(abs(t.amplitude) for t in sc.path_taps)
    if sc.single_snapshot_floor_db is not None:
        # floor is stated on the windowed, path-loss-referenced scale
        main_db = 20.0 * math.log10(main_amp)
        window = sc.settings.window.coefficients(sc.grid.n_tones)
        return noise_variance_for_snr(np.fft.fft(w.samples)[active], chain, main_amp,
                                      main_db - sc.single_snapshot_floor_db,
                                      sc.grid.n_samples, window)
    if imp.snr_db_per_snapshot is None:
        return 0.0
    return noise_variance_for_snr(np.fft.fft(w.samples)[active], chain, main_amp,
                                  imp.snr_db_per_snapshot, sc.grid.n_samples)


def measurement_simulator(sc, w, n, seed=None):
    imp = sc.impairments if seed is None else replace(sc.impairments, seed=int(seed))
    return CaptureSimulator(w, sc.taps, imp, n, spurs=spurs_of(sc),
                            noise_var=measurement_noise_var(sc, w))


def calibration_simulator(sc, w, n, seed=None):
    """Back-to-back capture through the calibration attenuator.

    It shares the measurement's absolute noise level (same receiver) and
    chain response but never the artifact taps, and uses its own RNG streams.
    """
    base = sc.impairments if seed is None else replace(sc.impairments, seed=int(seed))
    imp = replace(base, seed=calibration_seed(base.seed), trigger_offset_ps=0.0)
    noise = 0.0 if sc.noiseless_calibration else measurement_noise_var(sc, w)
    return CaptureSimulator(w, back_to_back_channel(sc.calibration_attenuation_db), imp, n,
                            spurs=spurs_of(sc), noise_var=noise)


def known_paths(sc, mpcs):
    if sc.known_paths_mode == "ground_truth":
        return [t.delay_s for t in sc.path_taps]
    return mpcs


def reference_loss(sc):
    if sc.reference_loss_db is not None:
        return sc.reference_loss_db
    return sc.calibration_attenuation_db


def check_expected(values, expected):
    """List of human-readable violations of ``expected`` (empty when all pass)."""
    failures = []
    for key, spec in sorted(expected.items()):
        got = values.get(key)
        if got is None:
            failures.append(f"{key}: not produced by this run")
        elif not abs(got - spec["value"]) <= spec["tol"]:
            failures.append(f"{key}: {got:.3f} outside {spec['value']} +/- {spec['tol']}")
    return failures


def summary_values(report):
    """Flat metric names usable in ``expected_metrics``."""
    mp = report["main_peak"]
    out = {
        "main_peak_delay_ns": mp["delay_s"] * 1e9,
        "main_peak_distance_m": mp["distance_m"],
        "main_peak_level_db": mp["level_db"],
        "noise_floor_db": report["noise_floor_db"],
        "noise_floor_rel_db": report["noise_floor_rel_db"],
        "dynamic_range_db": report["dynamic_range_db"],
        "single_snapshot_floor_db": report.get("single_snapshot_floor_db"),
        "averaging_improvement_db": report.get("averaging_improvement_db"),
        "crest_factor_db": report.get("crest_factor_db"),
        "n_mpcs": float(len(report["mpcs"])),
    }
    if report.get("mmpl_db") is not None:
        out["mmpl_db"] = report["mmpl_db"]
    return {k: v for k, v in out.items() if v is not None}


@dataclass
class RunResult:
    exit_code: int
    report: dict
    failures: list
    out_dir: Path


def run(sc, out_dir, full=False, keep_snapshots=False, seed=None, chunk_size=1000, workers=None):
    """Simulate, calibrate, process and report one scenario into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = sc.n_avrg_full if full else sc.n_avrg
    settings = replace(sc.settings, n_avrg=n)
    w = build_waveform(sc)
    fileio.write_waveform(out / "waveform.bin", w)

    log.info("%s: calibration capture, %d snapshots", sc.name, n)
    cal_sim = calibration_simulator(sc, w, n, seed)
    cal = build_calibration(cal_sim.chunks(chunk_size, workers), w, reference_loss(sc),
                            track=settings.track_phase, pre_average=settings.pre_average,
                            n_avrg=n, window=settings.window)
    fileio.write_calibration(out / "calibration.bin", cal)

    log.info("%s: measurement capture, %d snapshots", sc.name, n)
    meas = measurement_simulator(sc, w, n, seed)
    chunks = meas.chunks(chunk_size, workers)
    if keep_snapshots:
        chunks = _tee_to_file(chunks, out / "snapshots.bin", sc, meas.imp.seed)
    try:
        res = process_snapshots(chunks, w, cal, settings)
    finally:
        if hasattr(chunks, "close"):
            chunks.close()

    cm = metrics.compute_metrics(res.averaged_ir, reference_loss(sc), None, sc.guard_bins,
                                 sc.min_prominence_db, gain_budget(sc.grid.n_tones, n))
    paths = known_paths(sc, cm.mpcs)
    spur_delay, spur_level = metrics.largest_spurious_maximum(res.averaged_ir, paths, sc.guard_bins)
    cm.dynamic_range_db = float(cm.main_peak.level_db - spur_level)
    cm.spur = {"delay_s": float(spur_delay), "level_db": float(spur_level)}
    cm.mmpl_db = float(reference_loss(sc) + cm.dynamic_range_db)
    single = metrics.noise_floor(res.first_ir, cm.mpcs, sc.guard_bins, reference="scale")
    cm.extra = {
        "scenario": sc.name,
        "n_avrg": res.n_used,
        "seed": meas.imp.seed,
        "crest_factor_db": w.crest_factor_db,
        "single_snapshot_floor_db": single,
        "averaging_improvement_db": single - cm.noise_floor_db,
        "known_paths_s": [float(getattr(p, "delay_s", p)) for p in paths],
        "processing": settings.to_dict(),
        "warnings": res.warnings,
    }
    if sc.plan is not None:
        cm.extra["frequency_plan"] = sc.plan.to_dict()
        cm.extra["spur_report"] = check_spurs(sc.plan).to_dict()
    if sc.power_model is not None:
        cm.extra["power_model"] = sc.power_model.to_dict()
        if sc.if_drive_dbm is not None:
            cm.extra["rf_output"] = rf_output(sc.if_drive_dbm, sc.power_model).to_dict()

    report = json.loads(json.dumps(cm.to_dict()))
    fileio.write_impulse_response(out / "ir.bin", res.averaged_ir, sc.grid,
                                  {"scenario": sc.name, "n_avrg": res.n_used})
    metrics.write_metrics_json(out / "metrics.json", report)
    metrics.write_cir_csv(out / "cir.csv", res.averaged_ir)

    expected = sc.expected.get("full" if full else "desk", {})
    failures = check_expected(summary_values(report), expected)
    for f in failures:
        log.error("%s: %s", sc.name, f)
    return RunResult(EXIT_METRIC_FAILURE if failures else EXIT_OK, report, failures, out)


def _tee_to_file(chunks, path, sc, seed):
    with fileio.SnapshotWriter(path, sc.grid, seed=seed, scenario=sc.raw) as writer:
        for block in chunks:
            writer.write(block)
            yield block
