import numpy as np
import pytest

from refpcc.harness.scene import SceneSpec, gen_scene

SMALL_SPEC = SceneSpec(seed=11, n_frames=6, channels=32, azimuth_steps=512, max_range=20.0)

_criteria = {}
_notes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    passed = report.passed and not report.skipped
    if report.when == "setup" and passed:
        return
    _criteria[number] = (title, passed and _criteria.get(number, (None, True))[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, passed = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}")
        for text in _notes.get(number, []):
            terminalreporter.write_line(f"    {text}")


@pytest.fixture
def note(request):
    """Attach a measured value to the criterion line of the summary."""
    marker = request.node.get_closest_marker("criterion")

    def add(text):
        if marker is not None:
            _notes.setdefault(marker.args[0], []).append(text)
    return add


def random_cloud_points(rng, n, scale=10.0):
    """Float32-representable points, as they would arrive from a file."""
    return (rng.random((n, 3)) * scale).astype(np.float32).astype(np.float64)


def random_pair(rng, n_a, n_b, d, extent=None):
    """A perturbed partial copy of B plus outliers, so both sets are populated."""
    extent = extent or max(1.0, (n_b ** (1 / 3)) * d * 1.5)
    b = rng.random((n_b, 3)) * extent
    pick = rng.integers(0, n_b, n_a) if n_b else np.zeros(0, int)
    a = b[pick] + rng.normal(0, d, (n_a, 3)) if n_b else np.zeros((0, 3))
    outliers = rng.random(n_a) < 0.2
    a[outliers] = rng.random((int(outliers.sum()), 3)) * extent
    return a, b


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scene():
    return gen_scene(SMALL_SPEC)
