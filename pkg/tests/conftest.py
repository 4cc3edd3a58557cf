import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TABLE3 = """t(ms) size(byte) src_ip dst_ip sport dport
0.000 1514 54.192.39.46 192.168.0.95 443 59666
0.060 1514 54.192.39.46 192.168.0.95 443 59666
0.180 1514 54.192.39.46 192.168.0.95 443 59666
0.590 66 192.168.0.95 54.192.39.46 59666 443
2.490 1514 54.192.39.46 192.168.0.95 443 59666
"""


@pytest.fixture
def table3_text():
    return TABLE3


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(VERDICTS, [])

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
