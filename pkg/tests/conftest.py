"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

from __future__ import annotations

import time

import pytest

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


class Criterion:
    """Times a criterion body and records its verdict, then fails the test if needed."""

    def __init__(self, number: int, budget_s: float):
        self.number, self.budget_s = number, budget_s
        self.checks: list[tuple[bool, str]] = []

    def check(self, ok, detail: str) -> None:
        self.checks.append((bool(ok), detail))

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        if exc_type is not None:
            ACCEPTANCE[self.number] = (False, f"error: {exc_type.__name__}: {exc}")
            return False
        self.check(elapsed < self.budget_s, f"runtime {elapsed:.1f}s < {self.budget_s:g}s")
        ok = all(c for c, _ in self.checks)
        ACCEPTANCE[self.number] = (ok, "; ".join(("" if c else "NOT ") + d for c, d in self.checks))
        if not ok:
            pytest.fail(f"criterion {self.number}: {ACCEPTANCE[self.number][1]}")
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
