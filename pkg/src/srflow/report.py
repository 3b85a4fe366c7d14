"""Margin reports returned by every checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping


@dataclass(frozen=True)
class CheckReport:
    """Signed margin of one inequality over an evaluation grid.

    ``margin`` is the minimum of (right-hand side - left-hand side); the
    check passes when ``margin >= -tol``.  ``witness`` names the location
    (times, states, test function) attaining the minimum.
    """

    inequality: str
    margin: float
    witness: Mapping[str, Any]
    tol: float
    grid: str = ""
    informational: bool = False
    details: Mapping[str, Any] = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "pass" if self.margin >= -self.tol else "fail"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def combine(reports, inequality: str | None = None) -> CheckReport:
    """Reduce several reports of one inequality to their minimum.

    Ties are broken by position, so the reduction is deterministic.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to combine")
    worst = reports[0]
    for rep in reports[1:]:
        if rep.margin < worst.margin:
            worst = rep
    return CheckReport(
        inequality=inequality or worst.inequality,
        margin=worst.margin,
        witness=worst.witness,
        tol=max(r.tol for r in reports),
        grid=worst.grid,
        informational=all(r.informational for r in reports),
        details={"rows": len(reports)},
    )
