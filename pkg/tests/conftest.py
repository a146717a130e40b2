import numpy as np
import pytest

from thzsound.waveform import ToneGrid, fzc_waveform, nominal_grid


def pytest_addoption(parser):
    parser.addoption("--full", action="store_true", default=False,
                     help="run full-scale (50,000 snapshot) checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "full: full-scale runs, enabled with --full")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--full"):
        return
    skip = pytest.mark.skip(reason="full-scale run; pass --full to enable")
    for item in items:
        if "full" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def grid():
    return nominal_grid()


@pytest.fixture(scope="session")
def small_grid():
    # 64 tones, 80 samples: same 1.2x oversampling as the full grid
    return ToneGrid(64, 1e6, 80e6, 80)


@pytest.fixture(scope="session")
def raw_waveform(grid):
    return fzc_waveform(grid, 1)


@pytest.fixture(scope="session")
def optimized_waveform(grid):
    from thzsound.scenario import _cached_waveform
    return _cached_waveform(grid, 1, True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance reporting -----------------------------------------------------

ACCEPTANCE_IDS = range(1, 12)


def pytest_sessionstart(session):
    session.config._acceptance = {}


@pytest.fixture
def acceptance(request):
    """``record(criterion, passed, detail)`` for the acceptance summary."""
    store = request.config._acceptance

    def record(criterion, passed, detail):
        store[criterion] = (bool(passed), detail)
        print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = getattr(config, "_acceptance", {})
    if not store:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for cid in ACCEPTANCE_IDS:
        if cid in store:
            passed, detail = store[cid]
            terminalreporter.write_line(f"[{cid:2d}] {'PASS' if passed else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"[{cid:2d}] SKIP  (full-scale run; pass --full)"
                                        if cid == 8 else f"[{cid:2d}] NOT RUN")
