"""Binary I/Q files with JSON sidecars.

Every data file is little-endian float32 interleaved I/Q; row-major when it
holds several rows. The sidecar sits next to it as ``<file>.json``.
"""

import json
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .sounding_dsp import CalibrationProfile, FrequencyResponse, ImpulseResponse
from .waveform import ToneGrid, Waveform, crest_factor

FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


class MissingSidecar(FileNotFoundError):
    pass


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_iq(path, data, meta):
    path = Path(path)
    data = np.ascontiguousarray(data, dtype=np.complex128)
    inter = np.empty(data.shape + (2,), dtype=_DTYPE)
    inter[..., 0] = data.real
    inter[..., 1] = data.imag
    path.parent.mkdir(parents=True, exist_ok=True)
    inter.tofile(path)
    sidecar_path(path).write_text(json.dumps({"format_version": FORMAT_VERSION, **meta},
                                             indent=2, sort_keys=True))
    return path


def read_meta(path):
    sc = sidecar_path(path)
    if not sc.exists():
        raise MissingSidecar(f"sidecar {sc} not found")
    meta = json.loads(sc.read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise InvalidArgument(f"unsupported format_version {meta.get('format_version')!r}")
    return meta


def read_iq(path, mmap=False):
    """Return (complex array view, metadata). ``mmap`` avoids loading the file."""
    meta = read_meta(path)
    if mmap:
        raw = np.memmap(path, dtype=_DTYPE, mode="r")
    else:
        raw = np.fromfile(path, dtype=_DTYPE)
    if raw.size % 2:
        raise InvalidArgument(f"{path}: odd number of float32 values")
    return raw, meta


def _to_complex(raw):
    pairs = np.asarray(raw, dtype=np.float64).reshape(-1, 2)
    return pairs[:, 0] + 1j * pairs[:, 1]


def _grid_meta(grid):
    return {
        "sample_rate_hz": grid.sample_rate_hz,
        "n_samples": grid.n_samples,
        "active_tones": grid.n_tones,
        "tone_spacing_hz": grid.tone_spacing_hz,
    }


def _grid_from(meta):
    return ToneGrid(int(meta["active_tones"]), float(meta["tone_spacing_hz"]),
                    float(meta["sample_rate_hz"]), int(meta["n_samples"]))


# --- waveform ---------------------------------------------------------------

def write_waveform(path, w):
    meta = {
        "role": "waveform",
        **_grid_meta(w.grid),
        "root": w.root,
        "crest_factor_db": w.crest_factor_db,
        "norm": w.norm,
    }
    meta.update({k: v for k, v in w.meta.items() if isinstance(v, (int, float, str, bool))})
    return write_iq(path, w.samples, meta)


def read_waveform(path):
    raw, meta = read_iq(path)
    grid = _grid_from(meta)
    samples = _to_complex(raw)
    if samples.size != grid.n_samples:
        raise InvalidArgument(f"{path}: {samples.size} samples, sidecar says {grid.n_samples}")
    return Waveform(samples, grid, crest_factor(samples, 8), float(meta.get("norm", 1.0)),
                    meta.get("root"))


# --- snapshot sets ----------------------------------------------------------

class SnapshotWriter:
    """Append snapshot blocks to a file; the sidecar is written on close."""

    def __init__(self, path, grid, seed=None, scenario=None, role="snapshots", extra=None):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.grid = grid
        self.meta = {"role": role, **_grid_meta(grid), "seed": seed,
                     "scenario": scenario or {}, **(extra or {})}
        self.n_snapshots = 0
        self._fh = open(self.path, "wb")

    def write(self, rows):
        rows = np.atleast_2d(rows)
        if rows.shape[1] != self.grid.n_samples:
            raise InvalidArgument("snapshot width does not match the grid")
        inter = np.empty(rows.shape + (2,), dtype=_DTYPE)
        inter[..., 0] = rows.real
        inter[..., 1] = rows.imag
        self._fh.write(inter.tobytes())
        self.n_snapshots += rows.shape[0]

    def close(self):
        self._fh.close()
        meta = {"format_version": FORMAT_VERSION, **self.meta, "n_snapshots": self.n_snapshots}
        sidecar_path(self.path).write_text(json.dumps(meta, indent=2, sort_keys=True))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def iter_snapshots(path, chunk_size=1000, limit=None):
    """Yield (complex) snapshot blocks from a snapshot file without loading it whole."""
    raw, meta = read_iq(path, mmap=True)
    n = int(meta["n_samples"])
    total = int(meta["n_snapshots"])
    if raw.size != 2 * n * total:
        raise InvalidArgument(f"{path}: size does not match {total} x {n} snapshots")
    rows = raw.reshape(total, n, 2)
    total = total if limit is None else min(total, int(limit))
    for s in range(0, total, chunk_size):
        block = np.asarray(rows[s:min(s + chunk_size, total)], dtype=np.float64)
        yield block[..., 0] + 1j * block[..., 1]


def snapshot_grid(path):
    return _grid_from(read_meta(path))


# --- calibration profile ----------------------------------------------------

def write_calibration(path, cal):
    meta = {
        "role": "calibration",
        **_grid_meta(cal.system_fr.grid),
        "n_averages_used": cal.n_averages_used,
        "noise_floor_estimate_db": cal.noise_floor_estimate_db,
        "reference_loss_db": cal.reference_loss_db,
    }
    return write_iq(path, cal.system_fr.bins, meta)


def read_calibration(path):
    raw, meta = read_iq(path)
    if meta.get("role") != "calibration":
        raise InvalidArgument(f"{path} is not a calibration profile")
    grid = _grid_from(meta)
    return CalibrationProfile(
        FrequencyResponse(_to_complex(raw), grid),
        int(meta["n_averages_used"]),
        float(meta["noise_floor_estimate_db"]),
        float(meta.get("reference_loss_db", 0.0)),
    )


# --- impulse response -------------------------------------------------------

def write_impulse_response(path, ir, grid, extra=None):
    meta = {
        "role": "impulse_response",
        **_grid_meta(grid),
        "delay_step_s": ir.delay_step_s,
        "t0_offset_s": ir.t0_offset_s,
        "calibrated": ir.calibrated,
        **(extra or {}),
    }
    return write_iq(path, ir.taps, meta)


def read_impulse_response(path):
    raw, meta = read_iq(path)
    if meta.get("role") != "impulse_response":
        raise InvalidArgument(f"{path} is not an impulse response")
    ir = ImpulseResponse(_to_complex(raw), float(meta["delay_step_s"]), float(meta.get("t0_offset_s", 0.0)),
                         bool(meta.get("calibrated", False)))
    return ir, meta
