import numpy as np
import pytest

from cov3d_prep.phantom import lung_phantom, write_slice_stack

CORPUS_SHAPES = {
    "scan_a": (24, 40, 36),
    "scan_b": (30, 48, 48),
    "scan_c": (20, 36, 40),
    "nested/scan_d": (36, 44, 40),
}


def make_corpus(root):
    """Five slice-stack scans: four phantoms and one featureless block."""
    for name, shape in CORPUS_SHAPES.items():
        volume, _ = lung_phantom(shape, vessel_spacing=5)
        write_slice_stack(volume, root / name)
    write_slice_stack(np.full((12, 32, 32), 0.9), root / "scan_e")
    return root


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    return make_corpus(tmp_path_factory.mktemp("corpus"))


# -- acceptance criterion reporting -----------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    passed = _criteria.get(number, (True, title))[0]
    if report.failed or (report.when == "call" and report.skipped):
        passed = False
    _criteria[number] = (passed, title)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        passed, title = _criteria[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {number:2d}: {title}")
