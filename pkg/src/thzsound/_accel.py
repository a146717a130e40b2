"""Hot inner loops, numba-compiled with a pure-numpy fallback.

Set ``THZSOUND_DISABLE_NUMBA=1`` to force the numpy path. Both paths perform
the same IEEE operations in the same order, so the quantizer, the compensated
accumulator and the peak search give bit-identical results either way.
"""

import os

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None

NUMBA_ENABLED = njit is not None and os.environ.get(
    "THZSOUND_DISABLE_NUMBA", ""
).strip().lower() not in ("1", "true", "yes", "on")


# --- uniform mid-rise quantizer -------------------------------------------

def quantize_midrise_np(x, bits, full_scale=1.0):
    """Quantize a real array to ``bits`` levels spanning [-full_scale, full_scale)."""
    step = 2.0 * full_scale / (2.0 ** bits)
    top = full_scale - 0.5 * step
    q = step * (np.floor(x / step) + 0.5)
    return np.minimum(np.maximum(q, -top), top)


def _quantize_midrise_nb(x, bits, full_scale):
    step = 2.0 * full_scale / (2.0 ** bits)
    top = full_scale - 0.5 * step
    flat = x.ravel()
    out = np.empty_like(flat)
    for i in range(flat.size):
        q = step * (np.floor(flat[i] / step) + 0.5)
        if q > top:
            q = top
        elif q < -top:
            q = -top
        out[i] = q
    return out.reshape(x.shape)


# --- compensated row accumulation -------------------------------------------

def kahan_accumulate_np(acc, comp, rows):
    """Add each row of ``rows`` into ``acc`` in index order (Kahan summation).

    ``acc`` and ``comp`` are float64 vectors updated in place; ``rows`` is a
    float64 matrix whose width matches them.
    """
    for i in range(rows.shape[0]):
        y = rows[i] - comp
        t = acc + y
        comp[:] = (t - acc) - y
        acc[:] = t


def _kahan_accumulate_nb(acc, comp, rows):
    for i in range(rows.shape[0]):
        for j in range(rows.shape[1]):
            y = rows[i, j] - comp[j]
            t = acc[j] + y
            comp[j] = (t - acc[j]) - y
            acc[j] = t


# --- circular local maxima --------------------------------------------------

def local_maxima_np(p):
    """Indices i with p[i-1] < p[i] >= p[i+1] (circular neighbours)."""
    left = np.roll(p, 1)
    right = np.roll(p, -1)
    return np.flatnonzero((p > left) & (p >= right))


def _local_maxima_nb(p):
    n = p.size
    mask = np.zeros(n, dtype=np.bool_)
    count = 0
    for i in range(n):
        left = p[i - 1] if i > 0 else p[n - 1]
        right = p[i + 1] if i < n - 1 else p[0]
        if p[i] > left and p[i] >= right:
            mask[i] = True
            count += 1
    out = np.empty(count, dtype=np.int64)
    k = 0
    for i in range(n):
        if mask[i]:
            out[k] = i
            k += 1
    return out


# --- envelope projection used by the crest-factor optimizer -----------------

def envelope_project_np(y, limit, relaxation):
    """Relaxed projection of every sample onto the circle ``|y| = limit``.

    ``relaxation = 1`` is the plain projection; values in (1, 2) over-relax.
    """
    mag = np.abs(y)
    target = y * (limit / np.maximum(mag, 1e-300))
    return y + relaxation * (target - y)


def _envelope_project_nb(y, limit, relaxation):
    out = np.empty_like(y)
    for i in range(y.size):
        v = y[i]
        mag = abs(v)
        if mag < 1e-300:
            mag = 1e-300
        out[i] = v + relaxation * (v * (limit / mag) - v)
    return out


if NUMBA_ENABLED:
    quantize_midrise_nb = njit(cache=True)(_quantize_midrise_nb)
    kahan_accumulate_nb = njit(cache=True)(_kahan_accumulate_nb)
    local_maxima_nb = njit(cache=True)(_local_maxima_nb)
    envelope_project_nb = njit(cache=True)(_envelope_project_nb)

    def quantize_midrise(x, bits, full_scale=1.0):
        x = np.ascontiguousarray(x, dtype=np.float64)
        return quantize_midrise_nb(x, int(bits), float(full_scale))

    def kahan_accumulate(acc, comp, rows):
        kahan_accumulate_nb(acc, comp, np.ascontiguousarray(rows, dtype=np.float64))

    def local_maxima(p):
        return local_maxima_nb(np.ascontiguousarray(p, dtype=np.float64))

    def envelope_project(y, limit, relaxation):
        return envelope_project_nb(
            np.ascontiguousarray(y, dtype=np.complex128), float(limit), float(relaxation)
        )
else:
    quantize_midrise = quantize_midrise_np
    kahan_accumulate = kahan_accumulate_np
    local_maxima = local_maxima_np
    envelope_project = envelope_project_np


class CompensatedSum:
    """Running complex vector sum with a fixed, chunking-independent order."""

    def __init__(self, width):
        self._acc = np.zeros(2 * width)
        self._comp = np.zeros(2 * width)
        self.count = 0

    def add(self, rows):
        rows = np.ascontiguousarray(np.atleast_2d(rows), dtype=np.complex128)
        kahan_accumulate(self._acc, self._comp, rows.view(np.float64))
        self.count += rows.shape[0]

    @property
    def total(self):
        return self._acc.view(np.complex128).copy()

    def mean(self):
        return self.total / self.count
