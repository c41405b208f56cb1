import sys
from pathlib import Path

import pytest

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))  # oracles.py

ROOT = HERE.parent
SCENARIO = ROOT / "scenarios" / "fire_city.json"


@pytest.fixture(scope="session")
def city_cfg():
    from vsn.harness.config import load_config
    return load_config(SCENARIO)


@pytest.fixture(scope="session")
def city_world(city_cfg):
    from vsn.harness.world import run_iteration
    return run_iteration(city_cfg)


def scenario_doc() -> dict:
    """Fresh, mutable copy of the shipped scenario document."""
    import json
    return json.loads(SCENARIO.read_text())


def run_doc(doc, iteration=0, baseline=None):
    from vsn.harness.config import parse_config
    from vsn.harness.world import run_iteration
    return run_iteration(parse_config(doc), iteration, baseline)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
