import pytest

from dynbatch.queue_model import BatchFunction, Exponential, P4_ENERGY, SystemConfig, basic_scenario

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def constant_latency_case(rho: float, latency_ms: float = 2.4252, exponential: bool = True, b_max: int = 8):
    """Size-independent service with the P4 energy curve."""
    cfg = SystemConfig(1e-9, 1, b_max, BatchFunction.constant(latency_ms), P4_ENERGY,
                       Exponential() if exponential else basic_scenario().dist)
    return cfg.with_rho(rho)


@pytest.fixture
def small_config():
    return basic_scenario(0.6, b_max=4)
