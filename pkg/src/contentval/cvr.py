"""Content Validity Ratio, threshold screening and expert-panel construct assignment."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Literal, Mapping

from contentval.errors import ConfigError, InputError
from contentval.model import ESSENTIAL, AccuracyReport, Questionnaire, RatingSet, score_assignments

PositiveRule = Literal["ge1", "eq2"]
POSITIVE_RULES = ("ge1", "eq2")

CVR_CSV_HEADER = ["item_id", "construct_id", "n_e", "N", "cvr", "passes"]


def compute_cvr(n_e: int, N: int) -> float:
    """Lawshe's CVR = (n_e - N/2) / (N/2), in [-1, 1].

    >>> compute_cvr(7, 10)
    0.4
    """
    if isinstance(n_e, bool) or isinstance(N, bool) or not isinstance(n_e, int) or not isinstance(N, int):
        raise InputError(f"compute_cvr expects integers, got n_e={n_e!r}, N={N!r}")
    if N < 1:
        raise InputError(f"panel size must be >= 1, got {N}")
    if not 0 <= n_e <= N:
        raise InputError(f"essential count {n_e} outside 0..{N}")
    half = N / 2
    return (n_e - half) / half


@dataclass(frozen=True)
class CvrResult:
    item_id: str
    construct_id: str
    n_e: int
    N: int
    cvr: float
    passes: bool | None = None


def item_cvr(ratings: RatingSet, item_id: str, construct_id: str) -> CvrResult:
    n_e = sum(1 for e in ratings.experts if ratings.value(e, item_id, construct_id) == ESSENTIAL)
    N = ratings.panel_size
    return CvrResult(item_id, construct_id, n_e, N, compute_cvr(n_e, N))


def all_item_cvrs(ratings: RatingSet, q: Questionnaire) -> list[CvrResult]:
    return [item_cvr(ratings, it.id, c) for it in q.items for c in q.construct_ids]


class ThresholdTable(Mapping[int, float]):
    """Minimum CVR by panel size. Values lie in (0, 1] and never increase with N."""

    def __init__(self, values: Mapping[int, float]):
        table = {}
        for n, v in values.items():
            n, v = int(n), float(v)
            if n < 1:
                raise ConfigError(f"threshold table: panel size {n} must be >= 1")
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"threshold table: value {v} for N={n} outside (0, 1]")
            table[n] = v
        ordered = sorted(table.items())
        for (n0, v0), (n1, v1) in zip(ordered, ordered[1:]):
            if v1 > v0:
                raise ConfigError(f"threshold table must be non-increasing in N: N={n0} -> {v0}, N={n1} -> {v1}")
        self._table = dict(ordered)

    def __getitem__(self, n: int) -> float:
        return self._table[n]

    def __iter__(self):
        return iter(self._table)

    def __len__(self) -> int:
        return len(self._table)

    def threshold_for(self, n: int, override: float | None = None) -> float:
        if override is not None:
            if not -1.0 <= override <= 1.0:
                raise ConfigError(f"threshold override {override} outside [-1, 1]")
            return float(override)
        if n not in self._table:
            raise ConfigError(
                f"no CVR threshold for a panel of {n} experts; available sizes {sorted(self._table)}; "
                "pass an explicit threshold"
            )
        return self._table[n]

    @classmethod
    def from_json(cls, path: str | Path) -> ThresholdTable:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: cannot read threshold table: {exc}") from exc
        try:
            return cls({int(k): v for k, v in raw.items() if not str(k).startswith("_")})
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    @classmethod
    def lawshe(cls) -> ThresholdTable:
        text = resources.files("contentval.data").joinpath("lawshe_thresholds.json").read_text(encoding="utf-8")
        raw = json.loads(text)
        return cls({int(k): v for k, v in raw.items() if not k.startswith("_")})


def screen(
    results: Iterable[CvrResult],
    thresholds: ThresholdTable | None,
    override: float | None = None,
) -> tuple[list[CvrResult], list[CvrResult]]:
    """Split results into (retained, rejected); an item is retained when cvr >= threshold(N)."""
    retained, rejected = [], []
    for r in results:
        if override is None and thresholds is None:
            raise ConfigError("screening needs a threshold table or an explicit threshold")
        limit = (thresholds or ThresholdTable({})).threshold_for(r.N, override)
        if r.cvr >= limit:
            retained.append(replace(r, passes=True))
        else:
            rejected.append(replace(r, passes=False))
    return retained, rejected


@dataclass(frozen=True)
class PanelAssignment:
    item_id: str
    assigned_construct: str | None  # None marks an ambiguous (tied) item
    vote_counts: dict[str, int]
    tie: bool
    winners: tuple[str, ...]  # constructs sharing the top vote count


def _is_positive(value: int, rule: PositiveRule) -> bool:
    if rule == "ge1":
        return value >= 1
    if rule == "eq2":
        return value == ESSENTIAL
    raise ConfigError(f"unknown positive rule {rule!r}; expected one of {POSITIVE_RULES}")


def panel_assign(ratings: RatingSet, q: Questionnaire, positive_rule: PositiveRule = "ge1") -> list[PanelAssignment]:
    """Assign each item to the construct with the most positive expert ratings.

    ``ge1`` counts any rating of 1 or 2 as positive, ``eq2`` only "essential".
    When the maximum is shared, the item is left unassigned with ``tie=True``.
    """
    _is_positive(0, positive_rule)
    out = []
    experts = ratings.experts
    for item in q.items:
        votes = {
            c: sum(1 for e in experts if _is_positive(ratings.value(e, item.id, c), positive_rule))
            for c in q.construct_ids
        }
        top = max(votes.values())
        winners = [c for c, v in votes.items() if v == top]
        tie = len(winners) > 1
        out.append(PanelAssignment(item.id, None if tie else winners[0], votes, tie, tuple(winners)))
    return out


def panel_accuracy(assignments: Iterable[PanelAssignment], q: Questionnaire) -> AccuracyReport:
    return score_assignments(((a.item_id, a.assigned_construct) for a in assignments), q)


def cvr_csv(results: Iterable[CvrResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CVR_CSV_HEADER)
    for r in results:
        passes = "" if r.passes is None else str(r.passes).lower()
        w.writerow([r.item_id, r.construct_id, r.n_e, r.N, repr(r.cvr), passes])
    return buf.getvalue()


def panel_assignments_csv(assignments: Iterable[PanelAssignment], q: Questionnaire) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["item_id", "declared", "assigned", "correct", "tie"] + [f"votes_{c}" for c in q.construct_ids])
    declared = {it.id: it.declared_construct for it in q.items}
    for a in assignments:
        assigned = a.assigned_construct if a.assigned_construct is not None else "AMBIGUOUS"
        correct = a.assigned_construct == declared[a.item_id]
        w.writerow(
            [a.item_id, declared[a.item_id], assigned, str(correct).lower(), str(a.tie).lower()]
            + [a.vote_counts[c] for c in q.construct_ids]
        )
    return buf.getvalue()


__all__ = [
    "CvrResult",
    "PanelAssignment",
    "ThresholdTable",
    "all_item_cvrs",
    "compute_cvr",
    "cvr_csv",
    "item_cvr",
    "panel_accuracy",
    "panel_assign",
    "panel_assignments_csv",
    "screen",
]
