"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

from __future__ import annotations

RESULTS: list[tuple[str, str, str]] = []


def record(criterion: str, ok: bool | None, detail: str = "") -> bool:
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    RESULTS.append((criterion, status, detail))
    return bool(ok)
