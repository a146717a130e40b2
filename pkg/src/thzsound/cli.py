"""Command-line front end: gen | sim | cal | proc | report | run | list."""

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from . import fileio, metrics, scenario
from .errors import FitFailed, InvalidArgument, PlanInfeasible
from .sounding_dsp import ProcessingSettings, WindowSpec, build_calibration, process_snapshots
from .waveform import CrestOptConfig, ToneGrid, fzc_waveform, optimize_crest

log = logging.getLogger("thzsound")


def _window(text):
    try:
        return WindowSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _check_grid(a, b, what):
    if a != b:
        raise InvalidArgument(f"grid mismatch between {what}")


# --- subcommands -------------------------------------------------------------

def cmd_gen(args):
    grid = ToneGrid.from_bandwidth(args.tones, args.bw, args.rate)
    w = fzc_waveform(grid, args.root)
    if args.optimize_cf:
        w = optimize_crest(w, CrestOptConfig(max_iterations=args.max_iterations))
    meta = dict(w.meta)
    meta["seed"] = args.seed
    fileio.write_waveform(args.output, replace(w, meta=meta))
    print(f"{args.output}: {grid.n_tones} tones, crest factor {w.crest_factor_db:.3f} dB")
    return 0


def cmd_sim(args):
    sc = scenario.load(args.scenario)
    w = fileio.read_waveform(args.waveform) if args.waveform else scenario.build_waveform(sc)
    _check_grid(w.grid, sc.grid, "waveform and scenario")
    n = args.n or (sc.n_avrg_full if args.full else sc.n_avrg)
    make = scenario.calibration_simulator if args.calibration else scenario.measurement_simulator
    sim = make(sc, w, n, args.seed)
    role = "calibration_capture" if args.calibration else "snapshots"
    with fileio.SnapshotWriter(args.output, sc.grid, seed=sim.imp.seed, scenario=sc.raw,
                               extra={"capture": role}) as writer:
        for block in sim.chunks(args.chunk_size):
            writer.write(block)
    print(f"{args.output}: {n} snapshots ({role}), seed {sim.imp.seed}")
    return 0


def _settings(args, n_avrg=None):
    return ProcessingSettings(window=args.window, track_phase=args.track_phase,
                              pre_average=args.pre_average, n_avrg=n_avrg)


def cmd_cal(args):
    w = fileio.read_waveform(args.waveform)
    _check_grid(w.grid, fileio.snapshot_grid(args.snapshots), "waveform and snapshots")
    cal = build_calibration(fileio.iter_snapshots(args.snapshots, args.chunk_size, args.avg), w,
                            args.reference_loss, track=args.track_phase,
                            pre_average=args.pre_average, n_avrg=args.avg, window=args.window)
    fileio.write_calibration(args.output, cal)
    print(f"{args.output}: calibration from {cal.n_averages_used} snapshots, "
          f"floor {cal.noise_floor_estimate_db:.1f} dB")
    return 0


def cmd_proc(args):
    w = fileio.read_waveform(args.waveform)
    grid = fileio.snapshot_grid(args.snapshots)
    _check_grid(w.grid, grid, "waveform and snapshots")
    cal = None
    if args.cal:
        cal = fileio.read_calibration(args.cal)
        _check_grid(cal.system_fr.grid, grid, "calibration and snapshots")
    else:
        print("warning: no --cal given; output is uncalibrated (back-to-back mode)", file=sys.stderr)
    settings = _settings(args, args.avg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = process_snapshots(fileio.iter_snapshots(args.snapshots, args.chunk_size, args.avg),
                                w, cal, settings)
    for c in caught:
        print(f"warning: {c.message}", file=sys.stderr)
    fileio.write_impulse_response(args.output, res.averaged_ir, grid, {"n_avrg": res.n_used})
    manifest = {
        "snapshots": str(args.snapshots),
        "waveform": str(args.waveform),
        "calibration": str(args.cal) if args.cal else None,
        "calibrated": cal is not None,
        **settings.to_dict(),
        "n_avrg_used": res.n_used,
        "ref_bin": res.ref_bin,
        "warnings": res.warnings,
    }
    man_path = Path(str(args.output) + ".manifest.json")
    man_path.write_text(json.dumps(manifest, indent=2))
    print(f"{args.output}: averaged {res.n_used} snapshots")
    return 0


def cmd_report(args):
    ir, meta = fileio.read_impulse_response(args.ir)
    known = None if args.known_paths is None else [d * 1e-9 for d in args.known_paths]
    if args.reference_loss is not None and not ir.calibrated:
        raise InvalidArgument("--reference-loss needs a calibrated impulse response")
    cm = metrics.compute_metrics(ir, args.reference_loss, known, args.guard_bins,
                                 args.min_prominence)
    metrics.write_metrics_json(args.output, cm)
    if args.csv:
        metrics.write_cir_csv(args.csv, ir)
    mp = cm.main_peak
    print(f"main peak {mp.delay_s * 1e9:.3f} ns ({mp.level_db:.2f} dB), "
          f"DR {cm.dynamic_range_db:.2f} dB, {len(cm.mpcs)} MPCs")
    return 0


def cmd_run(args):
    sc = scenario.load(args.scenario)
    result = scenario.run(sc, args.out_dir, full=args.full, keep_snapshots=args.keep_snapshots,
                          seed=args.seed, chunk_size=args.chunk_size)
    values = scenario.summary_values(result.report)
    for key in ("main_peak_delay_ns", "main_peak_level_db", "single_snapshot_floor_db",
                "noise_floor_db", "dynamic_range_db", "mmpl_db"):
        if key in values:
            print(f"{key:26s} {values[key]:10.3f}")
    for f in result.failures:
        print(f"FAIL {f}", file=sys.stderr)
    return result.exit_code


def cmd_list(args):
    for name in scenario.shipped_scenarios():
        print(name)
    return 0


# --- parser --------------------------------------------------------------------

def _proc_flags(p):
    p.add_argument("--window", type=_window, default=WindowSpec.parse("chebyshev:80"),
                   help="'chebyshev:<dB>' or 'none' (default chebyshev:80)")
    p.add_argument("--track-phase", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--pre-average", type=int, default=1, metavar="M")
    p.add_argument("--avg", type=int, default=None, metavar="N",
                   help="use only the first N snapshots")
    p.add_argument("--chunk-size", type=int, default=1000)


def build_parser():
    parser = argparse.ArgumentParser(prog="thzsound", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a multitone FZC waveform")
    p.add_argument("--tones", type=int, default=2000)
    p.add_argument("--rate", type=float, default=2.4e9)
    p.add_argument("--bw", type=float, default=2e9)
    p.add_argument("--root", type=int, default=1)
    p.add_argument("--optimize-cf", action="store_true")
    p.add_argument("--max-iterations", type=int, default=CrestOptConfig.max_iterations)
    p.add_argument("--seed", type=int, default=0, help="recorded only; generation is deterministic")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("sim", help="simulate a capture of a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--waveform", type=Path)
    p.add_argument("--calibration", action="store_true",
                   help="simulate the back-to-back calibration capture instead")
    p.add_argument("--n", type=int)
    p.add_argument("--full", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--chunk-size", type=int, default=1000)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("cal", help="build a calibration profile from a back-to-back capture")
    p.add_argument("snapshots", type=Path)
    p.add_argument("--waveform", type=Path, required=True)
    p.add_argument("--reference-loss", type=float, default=0.0)
    p.add_argument("--seed", type=int, help="accepted for uniformity; unused")
    _proc_flags(p)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_cal)

    p = sub.add_parser("proc", help="calibrate, phase-track and average a capture")
    p.add_argument("snapshots", type=Path)
    p.add_argument("--waveform", type=Path, required=True)
    p.add_argument("--cal", type=Path)
    p.add_argument("--seed", type=int, help="accepted for uniformity; unused")
    _proc_flags(p)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_proc)

    p = sub.add_parser("report", help="metrics JSON and CSV export of an impulse response")
    p.add_argument("ir", type=Path)
    p.add_argument("--reference-loss", type=float)
    p.add_argument("--known-paths", type=float, nargs="*", metavar="NS")
    p.add_argument("--guard-bins", type=int, default=metrics.DEFAULT_GUARD_BINS)
    p.add_argument("--min-prominence", type=float, default=metrics.DEFAULT_PROMINENCE_DB)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--csv", type=Path)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="run a scenario end to end")
    p.add_argument("scenario", help="scenario file or shipped scenario name")
    p.add_argument("out_dir", type=Path)
    p.add_argument("--full", action="store_true", help="full-scale averaging")
    p.add_argument("--keep-snapshots", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--chunk-size", type=int, default=1000)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("list", help="list shipped scenarios")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidArgument, PlanInfeasible, FitFailed, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return scenario.EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
