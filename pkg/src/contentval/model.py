"""Domain types, input parsing and cross-artifact validation."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from contentval.errors import InputError

RATING_SCALE = (0, 1, 2)
ESSENTIAL = 2
EXPECTED_DIM = 768

QUESTIONNAIRE_CSV_HEADER = ["item_id", "text", "construct", "language"]
RATINGS_CSV_HEADER = ["expert_id", "item_id", "construct_id", "value"]


def _raise_issues(summary: str, issues: list[str], limit: int = 25) -> None:
    shown = issues[:limit]
    more = len(issues) - len(shown)
    lines = [summary] + [f"  - {msg}" for msg in shown]
    if more > 0:
        lines.append(f"  ... and {more} more")
    err = InputError("\n".join(lines))
    err.issues = list(issues)
    raise err


@dataclass(frozen=True)
class Construct:
    id: str
    label: str = ""

    def display(self) -> str:
        return self.label or self.id


@dataclass(frozen=True)
class Item:
    id: str
    text: str
    declared_construct: str
    language: str = "und"


@dataclass(frozen=True)
class Questionnaire:
    """A set of items, each declared to measure one of the listed constructs.

    Construct and item order are meaningful: reports and grids follow them.
    """

    name: str
    constructs: tuple[Construct, ...]
    items: tuple[Item, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "constructs", tuple(self.constructs))
        object.__setattr__(self, "items", tuple(self.items))
        issues = []
        if len(self.constructs) < 2:
            issues.append(f"questionnaire {self.name!r} needs at least 2 constructs, has {len(self.constructs)}")
        for cid, n in Counter(c.id for c in self.constructs).items():
            if n > 1:
                issues.append(f"duplicate construct id {cid!r}")
        if not self.items:
            issues.append("questionnaire has no items")
        for iid, n in Counter(i.id for i in self.items).items():
            if n > 1:
                issues.append(f"duplicate item id {iid!r}")
        known = {c.id for c in self.constructs}
        for item in self.items:
            if not item.text.strip():
                issues.append(f"item {item.id!r} has empty text")
            if item.declared_construct not in known:
                issues.append(f"item {item.id!r}: unknown construct {item.declared_construct!r}")
        used = {i.declared_construct for i in self.items}
        for c in self.constructs:
            if self.items and c.id not in used:
                issues.append(f"construct {c.id!r} has no items")
        if issues:
            _raise_issues(f"invalid questionnaire {self.name!r}", issues)

    @property
    def construct_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.constructs)

    @property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(i.id for i in self.items)

    def item(self, item_id: str) -> Item:
        for it in self.items:
            if it.id == item_id:
                return it
        raise InputError(f"unknown item id {item_id!r}")

    def declared_counts(self) -> dict[str, int]:
        counts = Counter(i.declared_construct for i in self.items)
        return {cid: counts[cid] for cid in self.construct_ids}

    def items_by_construct(self) -> dict[str, list[Item]]:
        groups: dict[str, list[Item]] = {cid: [] for cid in self.construct_ids}
        for it in self.items:
            groups[it.declared_construct].append(it)
        return groups

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "constructs": [{"id": c.id, "label": c.label} for c in self.constructs],
            "items": [
                {"id": i.id, "text": i.text, "construct": i.declared_construct, "language": i.language}
                for i in self.items
            ],
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> Questionnaire:
        try:
            constructs = [Construct(str(c["id"]), str(c.get("label", ""))) for c in raw.get("constructs", [])]
            items = [
                Item(str(i["id"]), str(i["text"]), str(i["construct"]), str(i.get("language", "und")))
                for i in raw.get("items", [])
            ]
        except (KeyError, TypeError, AttributeError) as exc:
            raise InputError(f"malformed questionnaire document: {exc!r}") from exc
        return cls(str(raw.get("name", "")), tuple(constructs), tuple(items))


def _parse_questionnaire_csv(path: Path) -> Questionnaire:
    # Leading "#name,<name>" and "#construct,<id>,<label>" lines form the manifest.
    name = path.stem
    constructs: list[Construct] = []
    items: list[Item] = []
    issues: list[str] = []
    header_seen = False
    seen_ids: dict[str, int] = {}
    with path.open(newline="", encoding="utf-8-sig") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if row[0].startswith("#"):
                tag = row[0][1:].strip().lower()
                if tag == "name" and len(row) >= 2:
                    name = row[1].strip()
                elif tag == "construct" and len(row) >= 2:
                    label = row[2].strip() if len(row) >= 3 else ""
                    constructs.append(Construct(row[1].strip(), label))
                continue
            if not header_seen:
                if [c.strip() for c in row[:4]] != QUESTIONNAIRE_CSV_HEADER[: len(row[:4])] or len(row) < 3:
                    raise InputError(f"{path}:{lineno}: expected header {','.join(QUESTIONNAIRE_CSV_HEADER)}")
                header_seen = True
                continue
            if len(row) < 3:
                issues.append(f"{path}:{lineno}: expected at least 3 columns, got {len(row)}")
                continue
            item_id, text, cid = (row[0].strip(), row[1], row[2].strip())
            language = row[3].strip() if len(row) > 3 and row[3].strip() else "und"
            if item_id in seen_ids:
                issues.append(f"{path}:{lineno}: duplicate item id {item_id!r} (first on line {seen_ids[item_id]})")
                continue
            seen_ids[item_id] = lineno
            if cid not in {c.id for c in constructs}:
                issues.append(f"{path}:{lineno}: item {item_id!r}: unknown construct {cid!r}")
                continue
            items.append(Item(item_id, text, cid, language))
    if not header_seen:
        raise InputError(f"{path}: missing header {','.join(QUESTIONNAIRE_CSV_HEADER)}")
    if issues:
        _raise_issues(f"{path}: invalid questionnaire", issues)
    if not items:
        raise InputError(f"{path}: questionnaire has no items")
    return Questionnaire(name, tuple(constructs), tuple(items))


def _parse_questionnaire_json(path: Path) -> Questionnaire:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: malformed JSON: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise InputError(f"{path}: expected a JSON object at top level")
    items = raw.get("items") or []
    if not items:
        raise InputError(f"{path}: questionnaire has no items")
    known = {str(c.get("id")) for c in raw.get("constructs", []) if isinstance(c, dict)}
    issues = []
    seen: dict[str, int] = {}
    for idx, it in enumerate(items):
        if not isinstance(it, dict) or "id" not in it or "text" not in it or "construct" not in it:
            issues.append(f"{path}: items[{idx}]: needs id, text and construct")
            continue
        iid = str(it["id"])
        if iid in seen:
            issues.append(f"{path}: items[{idx}]: duplicate item id {iid!r} (first at items[{seen[iid]}])")
        seen.setdefault(iid, idx)
        if str(it["construct"]) not in known:
            issues.append(f"{path}: items[{idx}]: item {iid!r}: unknown construct {it['construct']!r}")
    if issues:
        _raise_issues(f"{path}: invalid questionnaire", issues)
    try:
        return Questionnaire.from_dict(raw)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from exc


def parse_questionnaire(path: str | Path) -> Questionnaire:
    """Read a questionnaire from JSON (canonical) or CSV with a construct manifest."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    if path.suffix.lower() == ".csv":
        return _parse_questionnaire_csv(path)
    return _parse_questionnaire_json(path)


def save_questionnaire(q: Questionnaire, path: str | Path) -> None:
    Path(path).write_text(json.dumps(q.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Rating:
    expert_id: str
    item_id: str
    construct_id: str
    value: int


@dataclass(frozen=True)
class RatingSet:
    """Expert x item x construct ratings on the 0/1/2 scale.

    With ``allow_sparse`` set, absent cells read as 0 ("not useful").
    """

    ratings: tuple[Rating, ...]
    allow_sparse: bool = False
    _cells: dict[tuple[str, str, str], int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "ratings", tuple(self.ratings))
        cells: dict[tuple[str, str, str], int] = {}
        for r in self.ratings:
            if r.value not in RATING_SCALE:
                raise InputError(
                    f"rating out of scale: expert {r.expert_id!r}, item {r.item_id!r}, "
                    f"construct {r.construct_id!r} has value {r.value!r}"
                )
            key = (r.expert_id, r.item_id, r.construct_id)
            if key in cells:
                raise InputError(f"duplicate rating cell: expert {key[0]!r}, item {key[1]!r}, construct {key[2]!r}")
            cells[key] = r.value
        if not cells:
            raise InputError("rating set is empty")
        object.__setattr__(self, "_cells", cells)

    @property
    def experts(self) -> tuple[str, ...]:
        return tuple(sorted({r.expert_id for r in self.ratings}))

    @property
    def panel_size(self) -> int:
        return len(self.experts)

    def value(self, expert_id: str, item_id: str, construct_id: str) -> int:
        try:
            return self._cells[(expert_id, item_id, construct_id)]
        except KeyError:
            if self.allow_sparse:
                return 0
            raise InputError(
                f"missing rating cell: expert {expert_id!r}, item {item_id!r}, construct {construct_id!r}"
            ) from None

    def missing_cells(self, q: Questionnaire) -> list[tuple[str, str, str]]:
        return [
            (e, it.id, c)
            for e in self.experts
            for it in q.items
            for c in q.construct_ids
            if (e, it.id, c) not in self._cells
        ]


def parse_ratings(path: str | Path, q: Questionnaire, allow_sparse: bool = False) -> RatingSet:
    """Read ``expert_id,item_id,construct_id,value`` rows and check them against ``q``.

    Every (expert, item, construct) cell must be present unless ``allow_sparse``.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    item_ids = set(q.item_ids)
    construct_ids = set(q.construct_ids)
    issues: list[str] = []
    ratings: list[Rating] = []
    first_seen: dict[tuple[str, str, str], int] = {}
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != RATINGS_CSV_HEADER:
            raise InputError(f"{path}:1: expected header {','.join(RATINGS_CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                issues.append(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
                continue
            expert, item_id, cid, raw_value = (cell.strip() for cell in row)
            if item_id not in item_ids:
                issues.append(f"{path}:{lineno}: unknown item id {item_id!r}")
                continue
            if cid not in construct_ids:
                issues.append(f"{path}:{lineno}: unknown construct id {cid!r}")
                continue
            try:
                value = int(raw_value)
            except ValueError:
                issues.append(f"{path}:{lineno}: rating out of scale: {raw_value!r} is not an integer")
                continue
            if value not in RATING_SCALE:
                issues.append(f"{path}:{lineno}: rating out of scale: {value} for item {item_id!r}")
                continue
            key = (expert, item_id, cid)
            if key in first_seen:
                issues.append(
                    f"{path}:{lineno}: duplicate rating cell (expert {expert!r}, item {item_id!r}, "
                    f"construct {cid!r}; first on line {first_seen[key]})"
                )
                continue
            first_seen[key] = lineno
            ratings.append(Rating(expert, item_id, cid, value))
    if issues:
        _raise_issues(f"{path}: invalid ratings", issues)
    if not ratings:
        raise InputError(f"{path}: no ratings")
    rs = RatingSet(tuple(ratings), allow_sparse=allow_sparse)
    if not allow_sparse:
        missing = rs.missing_cells(q)
        if missing:
            _raise_issues(
                f"{path}: {len(missing)} missing rating cells (use allow-sparse to treat them as 0)",
                [f"missing cell: expert {e!r}, item {i!r}, construct {c!r}" for e, i, c in missing],
            )
    return rs


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_for_errors(self) -> None:
        if self.errors:
            _raise_issues("embeddings do not align with questionnaire", self.errors)


def validate_alignment(q: Questionnaire, e: Any, expected_dim: int = EXPECTED_DIM) -> ValidationReport:
    """Check that ``e`` (an EmbeddingMatrix) has exactly one well-formed row per item of ``q``."""
    report = ValidationReport()
    rows = np.asarray(e.rows)
    row_ids = list(e.item_ids)
    if rows.ndim != 2 or rows.shape[0] != len(row_ids):
        report.errors.append(f"embedding matrix shape {rows.shape} does not match {len(row_ids)} item ids")
        return report
    for iid, n in Counter(row_ids).items():
        if n > 1:
            report.errors.append(f"duplicate embedding row for item {iid!r}")
    present = set(row_ids)
    wanted = set(q.item_ids)
    for iid in q.item_ids:
        if iid not in present:
            report.errors.append(f"missing embedding for item {iid!r}")
    for pos, iid in enumerate(row_ids):
        if iid not in wanted:
            report.errors.append(f"embedding row {pos} ({iid!r}) has no questionnaire item")
    if rows.size and not np.all(np.isfinite(rows)):
        report.errors.append("embedding matrix contains non-finite values")
    dim = rows.shape[1]
    if dim != expected_dim:
        report.warnings.append(f"dimension {dim} ≠ {expected_dim}")
    return report


@dataclass(frozen=True)
class AccuracyReport:
    """Per-construct, macro and micro accuracy of an item -> construct assignment.

    Fractions are in [0, 1]. ``confusion[d][a]`` counts items declared in
    construct ``d`` and assigned to ``a``; tied items are counted in ``ties``
    instead, so ``confusion`` row sum plus ``ties`` equals the declared count.
    """

    constructs: tuple[str, ...]
    declared: dict[str, int]
    correct: dict[str, int]
    ties: dict[str, int]
    confusion: tuple[tuple[int, ...], ...]

    @property
    def per_construct(self) -> dict[str, float]:
        return {c: self.correct[c] / self.declared[c] for c in self.constructs}

    @property
    def macro(self) -> float:
        exact = sum(Fraction(self.correct[c], self.declared[c]) for c in self.constructs)
        return float(exact / len(self.constructs))

    @property
    def micro(self) -> float:
        return float(Fraction(sum(self.correct.values()), sum(self.declared.values())))

    def to_dict(self, method: str | None = None) -> dict[str, Any]:
        out: dict[str, Any] = {}
        if method is not None:
            out["method"] = method
        out.update(
            {
                "constructs": list(self.constructs),
                "per_construct": {c: 100.0 * v for c, v in self.per_construct.items()},
                "macro": 100.0 * self.macro,
                "micro": 100.0 * self.micro,
                "n_items": sum(self.declared.values()),
                "declared": dict(self.declared),
                "correct": dict(self.correct),
                "ties": dict(self.ties),
                "confusion": [list(row) for row in self.confusion],
            }
        )
        return out


def score_assignments(assigned: Iterable[tuple[str, str | None]], q: Questionnaire) -> AccuracyReport:
    """Build an AccuracyReport from (item_id, assigned construct or None for a tie) pairs."""
    mapping: dict[str, str | None] = {}
    for item_id, construct in assigned:
        if item_id in mapping:
            raise InputError(f"item {item_id!r} assigned more than once")
        mapping[item_id] = construct
    missing = [i for i in q.item_ids if i not in mapping]
    extra = [i for i in mapping if i not in set(q.item_ids)]
    if missing or extra:
        raise InputError(f"assignments do not cover the questionnaire: missing {missing}, unexpected {extra}")
    order = {c: k for k, c in enumerate(q.construct_ids)}
    confusion = [[0] * len(order) for _ in order]
    correct = {c: 0 for c in order}
    ties = {c: 0 for c in order}
    for item in q.items:
        got = mapping[item.id]
        d = item.declared_construct
        if got is None:
            ties[d] += 1
            continue
        if got not in order:
            raise InputError(f"item {item.id!r} assigned to unknown construct {got!r}")
        confusion[order[d]][order[got]] += 1
        if got == d:
            correct[d] += 1
    return AccuracyReport(
        constructs=q.construct_ids,
        declared=q.declared_counts(),
        correct=correct,
        ties=ties,
        confusion=tuple(tuple(row) for row in confusion),
    )
