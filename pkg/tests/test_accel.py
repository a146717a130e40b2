import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from thzsound import _accel

needs_numba = pytest.mark.skipif(not _accel.NUMBA_ENABLED, reason="numba path disabled")

finite = st.floats(-4.0, 4.0, allow_nan=False, allow_infinity=False)


@needs_numba
@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 300), elements=finite), st.integers(1, 16))
def test_quantizer_parity(x, bits):
    a = _accel.quantize_midrise_np(x, bits, 1.0)
    b = _accel.quantize_midrise_nb(x, bits, 1.0)
    assert np.array_equal(a, b)


@needs_numba
@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.integers(3, 200), elements=st.floats(0, 1e3)))
def test_local_maxima_parity(p):
    assert np.array_equal(_accel.local_maxima_np(p), _accel.local_maxima_nb(p))


@needs_numba
def test_kahan_parity(rng):
    rows = rng.standard_normal((57, 40))
    a_acc, a_comp = np.zeros(40), np.zeros(40)
    b_acc, b_comp = np.zeros(40), np.zeros(40)
    _accel.kahan_accumulate_np(a_acc, a_comp, rows)
    _accel.kahan_accumulate_nb(b_acc, b_comp, rows)
    assert np.array_equal(a_acc, b_acc) and np.array_equal(a_comp, b_comp)


@needs_numba
def test_envelope_projection_parity(rng):
    y = rng.standard_normal(500) + 1j * rng.standard_normal(500)
    a = _accel.envelope_project_np(y, 1.0, 1.5)
    b = _accel.envelope_project_nb(y, 1.0, 1.5)
    assert np.allclose(a, b, rtol=0, atol=1e-15)


def test_quantizer_levels():
    q = _accel.quantize_midrise(np.array([-2.0, -1.0, -1e-9, 0.0, 0.3, 0.99, 5.0]), 2)
    # 2 bits over [-1, 1): levels -0.75, -0.25, 0.25, 0.75
    assert np.array_equal(q, [-0.75, -0.75, -0.25, 0.25, 0.25, 0.75, 0.75])


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 200), elements=st.floats(-0.999, 0.999)),
       st.integers(2, 16))
def test_quantizer_error_bound(x, bits):
    step = 2.0 / 2 ** bits
    assert np.max(np.abs(_accel.quantize_midrise(x, bits) - x)) <= step / 2 + 1e-12


def test_local_maxima_circular_and_ties():
    p = np.array([5.0, 1.0, 3.0, 3.0, 0.0, 2.0])
    # index 0 is compared with index 5 across the wrap; of the plateau only the
    # first bin counts; index 5 loses to its wrapped neighbour
    assert list(_accel.local_maxima(p)) == [0, 2]


def test_compensated_sum_is_chunk_independent(rng):
    rows = (rng.standard_normal((300, 16)) + 1j * rng.standard_normal((300, 16))) * 1e6
    rows[::7] *= 1e-9
    whole = _accel.CompensatedSum(16)
    whole.add(rows)
    for size in (1, 7, 64):
        parts = _accel.CompensatedSum(16)
        for s in range(0, 300, size):
            parts.add(rows[s:s + size])
        assert np.array_equal(parts.total, whole.total)
    assert whole.count == 300
    assert np.allclose(whole.mean(), rows.mean(axis=0), rtol=1e-12)


def test_compensated_sum_beats_naive():
    big, tiny = 1e16, 1.0
    rows = np.array([[big], [tiny], [tiny], [-big]], dtype=np.complex128)
    acc = _accel.CompensatedSum(1)
    acc.add(rows)
    assert acc.total[0] == 2.0
