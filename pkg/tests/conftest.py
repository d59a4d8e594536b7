import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_survival(rng, n, tie_levels=None, censor=0.3):
    """Times with optional heavy ties, events with the given censoring share."""
    if tie_levels:
        time = rng.integers(1, tie_levels + 1, size=n).astype(float)
    else:
        time = rng.exponential(1.0, size=n) + 1e-3
    event = (rng.random(n) >= censor).astype(np.int8)
    if event.sum() == 0:
        event[0] = 1
    return time, event


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, printed after the run
_ACCEPTANCE: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance" not in report.nodeid or not name.startswith("test_ac"):
        return
    label = "AC" + name[len("test_ac"):].split("_", 1)[0]
    detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
    status = "PASS" if report.passed else "FAIL"
    prev = _ACCEPTANCE.get(label)
    if prev is None or prev[0] == "PASS":
        _ACCEPTANCE[label] = (status, detail if prev is None else f"{prev[1]}; {detail}".strip("; "))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE, key=lambda s: int(s[2:])):
        status, detail = _ACCEPTANCE[label]
        terminalreporter.write_line(f"{label}: {status}" + (f"  ({detail})" if detail else ""))
