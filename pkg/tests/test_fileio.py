import json

import numpy as np
import pytest

from thzsound import fileio
from thzsound.errors import InvalidArgument
from thzsound.sounding_dsp import (
    FrequencyResponse,
    ImpulseResponse,
    make_calibration_profile,
)
from thzsound.waveform import fzc_waveform


def test_layout_is_float32_interleaved(tmp_path):
    data = np.array([1 + 2j, -3.5 + 0.25j])
    fileio.write_iq(tmp_path / "x.bin", data, {"role": "test"})
    raw = np.fromfile(tmp_path / "x.bin", dtype="<f4")
    assert list(raw) == [1.0, 2.0, -3.5, 0.25]
    meta = json.loads((tmp_path / "x.bin.json").read_text())
    assert meta["format_version"] == 1 and meta["role"] == "test"


def test_waveform_round_trip(tmp_path, small_grid):
    w = fzc_waveform(small_grid, 3)
    fileio.write_waveform(tmp_path / "w.bin", w)
    back = fileio.read_waveform(tmp_path / "w.bin")
    assert back.grid == w.grid and back.root == 3
    assert np.allclose(back.samples, w.samples, atol=1e-7)
    assert back.crest_factor_db == pytest.approx(w.crest_factor_db, abs=1e-4)


def test_snapshot_writer_and_chunked_reader(tmp_path, small_grid, rng):
    rows = rng.standard_normal((25, 80)) + 1j * rng.standard_normal((25, 80))
    with fileio.SnapshotWriter(tmp_path / "s.bin", small_grid, seed=7, scenario={"a": 1}) as w:
        w.write(rows[:10])
        w.write(rows[10:])
    meta = fileio.read_meta(tmp_path / "s.bin")
    assert meta["n_snapshots"] == 25 and meta["seed"] == 7 and meta["scenario"] == {"a": 1}
    for key in ("sample_rate_hz", "n_samples", "format_version"):
        assert key in meta
    back = np.concatenate(list(fileio.iter_snapshots(tmp_path / "s.bin", chunk_size=4)))
    assert np.allclose(back, rows.astype(np.complex64))
    limited = list(fileio.iter_snapshots(tmp_path / "s.bin", chunk_size=4, limit=6))
    assert sum(b.shape[0] for b in limited) == 6
    assert fileio.snapshot_grid(tmp_path / "s.bin") == small_grid


def test_snapshot_width_checked(tmp_path, small_grid):
    with fileio.SnapshotWriter(tmp_path / "s.bin", small_grid) as w:
        with pytest.raises(InvalidArgument):
            w.write(np.zeros((2, 79), complex))


def test_missing_sidecar(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"\0" * 16)
    with pytest.raises(fileio.MissingSidecar):
        fileio.read_iq(tmp_path / "x.bin")


def test_bad_version(tmp_path):
    fileio.write_iq(tmp_path / "x.bin", np.zeros(2), {})
    (tmp_path / "x.bin.json").write_text(json.dumps({"format_version": 99}))
    with pytest.raises(InvalidArgument):
        fileio.read_iq(tmp_path / "x.bin")


def test_truncated_snapshot_file(tmp_path, small_grid):
    with fileio.SnapshotWriter(tmp_path / "s.bin", small_grid) as w:
        w.write(np.zeros((3, 80), complex))
    with open(tmp_path / "s.bin", "r+b") as fh:
        fh.truncate(80 * 8 * 2)
    with pytest.raises(InvalidArgument):
        next(fileio.iter_snapshots(tmp_path / "s.bin"))


def test_calibration_round_trip(tmp_path, small_grid, rng):
    bins = rng.standard_normal(64) + 1j * rng.standard_normal(64) + 3
    cal = make_calibration_profile(FrequencyResponse(bins, small_grid), 100, 54.0, -90.0)
    fileio.write_calibration(tmp_path / "c.bin", cal)
    back = fileio.read_calibration(tmp_path / "c.bin")
    assert back.n_averages_used == 100 and back.reference_loss_db == 54.0
    assert back.noise_floor_estimate_db == -90.0
    assert np.allclose(back.system_fr.bins, cal.system_fr.bins, rtol=1e-6)
    with pytest.raises(InvalidArgument):
        fileio.read_impulse_response(tmp_path / "c.bin")


def test_impulse_response_round_trip(tmp_path, small_grid):
    ir = ImpulseResponse(np.arange(80) * (1 + 1j) * 1e-3, 1 / 80e6, 0.0, True)
    fileio.write_impulse_response(tmp_path / "ir.bin", ir, small_grid, {"n_avrg": 5})
    back, meta = fileio.read_impulse_response(tmp_path / "ir.bin")
    assert back.calibrated and meta["n_avrg"] == 5
    assert np.allclose(back.taps, ir.taps, rtol=1e-6)
    assert back.delay_step_s == ir.delay_step_s
