from pathlib import Path

import numpy as np
import pytest

from tabadv.constraints import load_constraints, load_schema
from tabadv.data import SplitSpec, load_csv, split
from tabadv.models import TargetArch, train_target

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "tabadv" / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def toy_schema():
    return load_schema(FIXTURES / "toy_schema.json")


@pytest.fixture(scope="session")
def toy(toy_schema):
    return load_csv(FIXTURES / "toy.csv", toy_schema, "label")


@pytest.fixture(scope="session")
def toy_linear(toy_schema):
    return load_constraints(FIXTURES / "linear.txt", toy_schema)


@pytest.fixture(scope="session")
def toy_mixed(toy_schema):
    return load_constraints(FIXTURES / "mixed.txt", toy_schema)


@pytest.fixture(scope="session")
def toy_splits(toy):
    return split(toy, SplitSpec(stratify=True, seed=0))


@pytest.fixture(scope="session")
def toy_target(toy_splits):
    tr, va, te = toy_splits
    return train_target(tr, va, TargetArch(epochs=30), test=te)


@pytest.fixture(scope="session")
def gauss_schema():
    return load_schema(FIXTURES / "gauss2d_schema.json")


@pytest.fixture(scope="session")
def gauss(gauss_schema):
    return load_csv(FIXTURES / "gauss2d.csv", gauss_schema, "label")


@pytest.fixture(scope="session")
def gauss_cset(gauss_schema):
    return load_constraints(FIXTURES / "gauss2d.txt", gauss_schema)


@pytest.fixture(scope="session")
def gauss_splits(gauss):
    return split(gauss, SplitSpec(stratify=True, seed=0))


@pytest.fixture(scope="session")
def gauss_target(gauss_splits):
    tr, va, te = gauss_splits
    return train_target(tr, va, TargetArch(epochs=30), test=te)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance summary --------------------------------------------------------------
# Tests marked ``criterion(n, title)`` are folded into one PASS/FAIL line per criterion.

_CRITERIA: dict[str, tuple[int, str]] = {}
_OUTCOMES: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(session, config, items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _CRITERIA[item.nodeid] = (int(mark.args[0]), str(mark.args[1]))


def pytest_runtest_logreport(report):
    if report.nodeid not in _CRITERIA:
        return
    number, title = _CRITERIA[report.nodeid]
    entry = _OUTCOMES.setdefault(number, {"title": title, "ok": True, "ran": False, "details": []})
    if report.failed:
        entry["ok"] = False
    if report.when == "call":
        entry["ran"] = True
        entry["ok"] = entry["ok"] and report.passed
        entry["details"] += [str(v) for k, v in report.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        e = _OUTCOMES[number]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        detail = f" [{'; '.join(e['details'])}]" if e["details"] else ""
        terminalreporter.write_line(f"criterion {number:>2} {status}  {e['title']}{detail}")
