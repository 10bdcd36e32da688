import numpy as np
import pytest

from implantdiff.voxel import VoxelGrid


def ball_mask(n: int, radius: float, center=None) -> np.ndarray:
    c = (n - 1) / 2 if center is None else center
    x, y, z = np.meshgrid(*[np.arange(n)] * 3, indexing="ij")
    return ((x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2 <= radius**2).astype(np.uint8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def sphere64():
    return VoxelGrid(ball_mask(64, 10.0))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        detail = ", ".join(f"{k}={v}" for k, v in item.user_properties)
        prev = item.config._criteria.get(number)
        if prev is None or prev[1] == "PASS":
            item.config._criteria[number] = (title, "FAIL" if failed else "PASS", detail, report.duration)


def pytest_terminal_summary(terminalreporter, config):
    criteria = getattr(config, "_criteria", {})
    if not criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(criteria):
        title, status, detail, duration = criteria[number]
        line = f"criterion {number:2d} {status}: {title} ({duration:.1f} s)"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
