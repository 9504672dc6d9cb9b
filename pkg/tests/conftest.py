import pytest
import yaml

from tendon_finger.config import default_document
from tendon_finger.joints import joint_spec

TINY = {
    "protocol": {"load_min": 0.1, "load_max": 0.3, "load_step": 0.1, "duration_per_load": 2.0,
                 "temperatures": [20.0, 40.0]},
    "grasp": {"trials": 2, "trial_duration": 2.0},
    "comparison": {"trials": 2, "trial_duration": 2.0},
    "gpr": {"restarts": 2, "max_rows": 200, "search_rows": 100},
    "joints": ["IF-PIP", "TF-CMP"],
}


def tiny_document(output_dir):
    doc = default_document()
    for key, value in TINY.items():
        if isinstance(value, dict):
            doc[key].update(value)
        else:
            doc[key] = value
    doc["output_dir"] = str(output_dir)
    return doc


@pytest.fixture(scope="session")
def base_finger():
    return joint_spec("IF-PIP").finger()


@pytest.fixture
def tiny_config(tmp_path):
    """Path to a fast run configuration writing under ``tmp_path/run``."""
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(tiny_document(tmp_path / "run"), sort_keys=False))
    return path


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def verdict(request, capsys):
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        request.config.stash[ACCEPTANCE].append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
