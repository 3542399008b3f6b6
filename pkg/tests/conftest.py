"""Shared fixtures: expert recipes come from ``experiments/experts`` so the tests
exercise the same files the CLI uses."""

from pathlib import Path

import pytest

from a2t.experts import build_from_file, load_store

ROOT = Path(__file__).resolve().parents[1]
EXPERIMENTS = ROOT / "experiments"
EXPERT_SPECS = EXPERIMENTS / "experts"

CATCH_EXPERTS = ("catch_LL", "catch_LR", "catch_FAV", "catch_INV", "catch_PART")


def build_store(store: Path, names) -> dict:
    for name in names:
        if not (store / name).is_dir():
            build_from_file(EXPERT_SPECS / f"{name}.cfg", store)
    return {rec.name: rec for rec in load_store(store, names)}


@pytest.fixture(scope="session")
def expert_store(tmp_path_factory) -> Path:
    return tmp_path_factory.mktemp("store")


@pytest.fixture(scope="session")
def catch_experts(expert_store) -> dict:
    """The five 6x6 catch value experts, trained once per session."""
    return build_store(expert_store, CATCH_EXPERTS)


# acceptance report: one PASS/FAIL line per criterion, repeated in the terminal summary

ACCEPTANCE_LINES: list = []


@pytest.fixture
def report():
    def _report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
