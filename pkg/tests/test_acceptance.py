"""One test per acceptance criterion; a PASS/FAIL line per criterion is printed
in the terminal summary. Criterion 8 runs only with ``--full``."""

import json
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.signal import windows

from thzsound import scenario
from thzsound.airsim import (
    CaptureSimulator,
    ChannelTap,
    ImpairmentConfig,
    PhaseDrift,
    drift_path,
    estimate_antenna_gain,
    fspl_db,
)
from thzsound.frequency_plan import (
    NOMINAL_COMPRESSION_DB,
    NOMINAL_POWER_POINTS,
    check_spurs,
    derive_plan,
    fit_power_model,
    rf_output,
)
from thzsound.metrics import main_peak, noise_floor
from thzsound.sounding_dsp import (
    FrequencyResponse,
    ProcessingSettings,
    build_calibration,
    circular_xcorr,
    gain_budget,
    ir_from_bins,
    make_calibration_profile,
    process_snapshots,
)
from thzsound.waveform import CrestOptConfig, fzc_waveform, optimize_crest, nominal_grid

# Raw 2000-tone FZC crest factor at 8x oversampling; brute-force oracle in
# test_waveform.test_raw_fzc_crest_factor_oracle.
RAW_FZC_CF_DB = 2.589

# Untracked 300-degree Wiener drift, N = 1000: Monte Carlo of the coherent loss
# 20*log10|mean(exp(j*phi))| over 2000 drift realizations gave median 6.95 dB,
# 5th percentile 3.96 dB, 95th 14.2 dB, P(>= 10 dB) = 0.18. The pinned bound is
# the 5th percentile; the run must also match its own realization's oracle.
UNTRACKED_MIN_DEGRADATION_DB = 3.9


def within(value, target, tol):
    return abs(value - target) <= tol


def fmt(name, value, target, tol, unit="dB"):
    ok = within(value, target, tol)
    return ok, f"{name} {value:.3f} {unit} (target {target} +/- {tol})"


def _collect(parts):
    oks, texts = zip(*parts)
    return all(oks), "; ".join(texts)


def test_criterion_01_gain_budget(acceptance):
    gb = gain_budget(2000, 50000)
    ok, text = _collect([fmt("G_corr", gb.g_corr_db, 33.01, 0.01),
                         fmt("G_avrg", gb.g_avrg_db, 46.99, 0.01),
                         fmt("G_proc", gb.g_proc_db, 80.00, 0.01)])
    assert acceptance(1, ok, text)


def test_criterion_02_crest_factor(acceptance):
    t0 = time.perf_counter()
    raw = fzc_waveform(nominal_grid(), 1)
    opt = optimize_crest(raw, CrestOptConfig())
    elapsed = time.perf_counter() - t0
    ok = opt.crest_factor_db <= 0.5 and elapsed < 30.0 and within(raw.crest_factor_db,
                                                                  RAW_FZC_CF_DB, 1e-3)
    assert acceptance(2, ok, f"optimized CF {opt.crest_factor_db:.3f} dB (<= 0.5), raw FZC "
                             f"{raw.crest_factor_db:.3f} dB (pinned {RAW_FZC_CF_DB}), "
                             f"{elapsed:.1f} s (< 30 s)")


def test_criterion_03_link_budget(acceptance):
    ok, text = _collect([fmt("FSPL(1 m, 300 GHz)", fspl_db(1.0, 300e9), 81.98, 0.01),
                         fmt("antenna gain", estimate_antenna_gain(-72.3, 1.0, 300e9), 4.85,
                             0.05, "dBi")])
    assert acceptance(3, ok, text)


def test_criterion_04_frequency_plan(acceptance):
    plan = derive_plan(12e9, 8e9, 8.15e9, 36, 2e9)
    rep = check_spurs(plan)
    ok = (plan.rx_if_center_hz == 6_600_000_000 and rep.lo_leak_rx_if_hz == 5_400_000_000
          and rep.clear and rep.margins_hz["lo_leak"] == 200_000_000)
    assert acceptance(4, ok, f"Rx IF {plan.rx_if_center_hz} Hz, LO leak at "
                             f"{rep.lo_leak_rx_if_hz} Hz, clear={rep.clear}, margin "
                             f"{rep.margins_hz['lo_leak']} Hz")


def test_criterion_05_power_model(acceptance):
    model = fit_power_model(NOMINAL_POWER_POINTS, NOMINAL_COMPRESSION_DB)
    a, b = rf_output(-3.0, model), rf_output(0.0, model)
    ok, text = _collect([fmt("-3 dBm signal", a.signal_dbm, -5.3, 0.3, "dBm"),
                         fmt("-3 dBm sum", a.sum_dbm, -4.2, 0.3, "dBm"),
                         fmt("0 dBm signal", b.signal_dbm, -2.9, 0.3, "dBm"),
                         fmt("0 dBm sum", b.sum_dbm, -2.2, 0.3, "dBm")])
    assert acceptance(5, ok, text)


def _flat_cal(grid):
    return make_calibration_profile(FrequencyResponse(np.ones(grid.n_tones), grid), 1)


def test_criterion_06_averaging_law(acceptance, optimized_waveform):
    w = optimized_waveform
    imp = ImpairmentConfig(snr_db_per_snapshot=33.1, adc_bits_tx=None, adc_bits_rx=None,
                           seed=6)
    sim = CaptureSimulator(w, [ChannelTap(0.0, -54.0)], imp, 1000)
    cal = _flat_cal(w.grid)
    settings = ProcessingSettings(track_phase=False)
    # single-snapshot reference: linear mean of 100 individual floors
    singles = []
    for i in range(100):
        ir = process_snapshots(sim.snapshots(i, i + 1), w, cal, settings).averaged_ir
        singles.append(10 ** (noise_floor(ir) / 10))
    ref = 10 * np.log10(np.mean(singles))
    parts = []
    for n in (10, 100, 1000):
        ir = process_snapshots(sim.chunks(500), w, cal, replace(settings, n_avrg=n)).averaged_ir
        parts.append(fmt(f"N={n} reduction", ref - noise_floor(ir), 10 * np.log10(n), 0.5))
    ok, text = _collect(parts)
    assert acceptance(6, ok, text)


def _b2b_floor(noiseless):
    raw = json.loads(scenario.shipped_path("b2b_54db").read_text())
    raw["calibration"]["noiseless"] = noiseless
    sc = scenario.from_dict(raw)
    w = scenario.build_waveform(sc)
    n = sc.n_avrg
    cal = build_calibration(scenario.calibration_simulator(sc, w, n).chunks(), w,
                            scenario.reference_loss(sc), n_avrg=n, window=sc.settings.window)
    res = process_snapshots(scenario.measurement_simulator(sc, w, n).chunks(), w, cal,
                            sc.settings)
    return noise_floor(res.averaged_ir, reference="scale")


def test_criterion_07_calibration_noise_penalty(acceptance):
    noisy, clean = _b2b_floor(False), _b2b_floor(True)
    ok, text = fmt("noisy-cal floor penalty", noisy - clean, 3.0, 0.5)
    assert acceptance(7, ok, f"{text}; floors {noisy:.2f} / {clean:.2f} dB at N=1000")


@pytest.mark.full
def test_criterion_08_full_scale_back_to_back(acceptance, tmp_path):
    sc = scenario.load("b2b_54db")
    res = scenario.run(sc, tmp_path, full=True)
    v = scenario.summary_values(res.report)
    ok, text = _collect([
        fmt("main", v["main_peak_level_db"], -54.0, 0.5),
        fmt("single floor", v["single_snapshot_floor_db"], -87.1, 1.0),
        fmt("averaged floor", v["noise_floor_db"], -130.8, 1.0),
        fmt("improvement", v["averaging_improvement_db"], 43.7, 1.0),
        fmt("DR", v["dynamic_range_db"], 68.6, 1.0),
        fmt("MMPL", v["mmpl_db"], 122.6, 1.0),
    ])
    spur = res.report["spur"]
    text += f"; largest non-path maximum {spur['level_db']:.1f} dB at {spur['delay_s'] * 1e9:.1f} ns"
    assert acceptance(8, ok, text)


def test_criterion_09_phase_tracking(acceptance):
    # Noiseless calibration: with a noisy one part of the floor is calibration
    # error times the signal, which drift attenuates along with the peak.
    raw = json.loads(scenario.shipped_path("b2b_54db").read_text())
    raw["calibration"]["noiseless"] = True
    sc = scenario.from_dict(raw)
    w = scenario.build_waveform(sc)
    n = 1000
    cal = build_calibration(scenario.calibration_simulator(sc, w, n).chunks(), w,
                            scenario.reference_loss(sc), n_avrg=n, window=sc.settings.window)
    still = replace(sc, impairments=replace(sc.impairments, drift=PhaseDrift("none", 0.0)))
    drifting = replace(sc, impairments=replace(sc.impairments,
                                               drift=PhaseDrift("wiener", 300.0)))

    def floor(s, track):
        res = process_snapshots(scenario.measurement_simulator(s, w, n).chunks(), w, cal,
                                replace(s.settings, track_phase=track, n_avrg=n))
        return noise_floor(res.averaged_ir)  # relative to the main peak

    base = floor(still, True)
    tracked = floor(drifting, True)
    untracked = floor(drifting, False)
    phi = drift_path(drifting.impairments.drift, n, drifting.impairments.seed)
    oracle = -20 * np.log10(abs(np.mean(np.exp(1j * phi))))
    degr = untracked - base
    ok1, t1 = fmt("tracked - no drift", tracked - base, 0.0, 0.5)
    ok2 = degr >= UNTRACKED_MIN_DEGRADATION_DB and within(degr, oracle, 0.5)
    t2 = (f"untracked degradation {degr:.2f} dB (oracle {oracle:.2f} dB for this drift, "
          f"pinned >= {UNTRACKED_MIN_DEGRADATION_DB} dB)")
    assert acceptance(9, ok1 and ok2, f"{t1}; {t2}")


def test_criterion_10_ota_scenarios(acceptance, tmp_path):
    parts = []
    for name, delay_ns, dist in (("ota_waveguide_1m", 3.5, 1.049), ("ota_reflector", 12.75, 3.822)):
        res = scenario.run(scenario.load(name), tmp_path / name)
        mp = res.report["main_peak"]
        parts.append(fmt(f"{name} main delay", mp["delay_s"] * 1e9, delay_ns, 0.05, "ns"))
        parts.append(fmt(f"{name} distance", mp["distance_m"], dist, 0.016, "m"))
    ok, text = _collect(parts)
    assert acceptance(10, ok, text)


def test_criterion_11_oracle_equivalences(acceptance):
    rng = np.random.default_rng(11)
    worst = 0.0
    for n in (32, 100, 256):
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        r = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        direct = np.array([np.sum(np.roll(x, -m) * np.conj(r)) for m in range(n)])
        worst = max(worst, np.sqrt(np.mean(np.abs(circular_xcorr(x, r) - direct) ** 2)))
    corr_ok = worst < 1e-9

    w = windows.chebwin(2000, 80)
    spec = np.abs(np.fft.fft(w, 2000 * 16))
    sdb = 20 * np.log10(spec / spec.max())
    null = int(np.argmax(np.diff(sdb[: 2000 * 8]) > 0))
    sidelobe = float(sdb[null: 2000 * 8].max())
    cheb_ok = sidelobe <= -80.0 + 1e-6

    g = nominal_grid()
    f = g.tone_frequencies_hz
    m = 37
    h = ir_from_bins(np.exp(-2j * np.pi * f * m / g.sample_rate_hz), g)[0]
    h0 = ir_from_bins(np.ones(g.n_tones), g)[0]
    shift_err = float(np.max(np.abs(h - np.roll(h0, m))))
    b = rng.standard_normal(g.n_tones) + 1j * rng.standard_normal(g.n_tones)
    hb = ir_from_bins(b, g)[0]
    pars_err = abs(np.sum(np.abs(hb) ** 2) - g.n_samples / g.n_tones ** 2 * np.sum(np.abs(b) ** 2))
    pars_err /= np.sum(np.abs(hb) ** 2)
    ok = corr_ok and cheb_ok and shift_err < 1e-9 and pars_err < 1e-9
    assert acceptance(11, ok, f"xcorr RMS err {worst:.1e}; Chebyshev max sidelobe {sidelobe:.2f} dB; "
                              f"shift err {shift_err:.1e}; Parseval rel err {pars_err:.1e}")
