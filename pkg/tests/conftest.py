from pathlib import Path

import numpy as np
import pytest

from gridledger.decomposition import load_partition
from gridledger.powernet import data_path, default_plan, generate_measurements, ieee14, load_case

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def net14():
    return ieee14()


@pytest.fixture(scope="session")
def twobus():
    return load_case(DATA / "twobus.m")


@pytest.fixture(scope="session")
def part14(net14):
    return load_partition(data_path("ieee14_partition.txt"), net14)


@pytest.fixture(scope="session")
def truth14(net14):
    return net14.stored_state()


def measurements14(net, seed, sigma=0.01):
    return generate_measurements(net.stored_state(), default_plan(net), sigma, seed, net)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criterion number -> (passed, name, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


def record_criterion(n: int, name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), name, detail)
    print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {name} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, name, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {name} ({detail})")
