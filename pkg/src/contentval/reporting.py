"""Comparison tables, radar plot data/SVG, assignment grids and inter-method agreement."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Literal, Mapping, Protocol, Sequence
from xml.sax.saxutils import escape

from contentval.errors import InputError
from contentval.model import AccuracyReport, Questionnaire

TableFormat = Literal["markdown", "csv"]


class _Assigned(Protocol):
    item_id: str
    assigned_construct: str | None
    tie: bool
    winners: tuple[str, ...]


def format_pct(value: float) -> str:
    """Percentage with at most one decimal: 84.0 -> '84', 72.5 -> '72.5'."""
    text = f"{value:.1f}"
    return text[:-2] if text.endswith(".0") else text


@dataclass(frozen=True)
class MethodResult:
    """One table row: per-construct accuracy percentages for a method.

    ``reference_total`` carries an externally reported total (for instance a
    published figure) that is shown as a footnote when it differs from the
    macro mean; it never replaces it.
    """

    name: str
    per_construct: Mapping[str, float]
    reference_total: float | None = None

    def __post_init__(self) -> None:
        for c, v in self.per_construct.items():
            if not 0.0 <= v <= 100.0 or math.isnan(v):
                raise InputError(f"method {self.name!r}: accuracy {v} for {c!r} outside [0, 100]")

    @property
    def total(self) -> float:
        values = list(self.per_construct.values())
        return sum(values) / len(values)

    @classmethod
    def from_report(cls, name: str, report: AccuracyReport, reference_total: float | None = None) -> MethodResult:
        return cls(name, {c: 100.0 * v for c, v in report.per_construct.items()}, reference_total)

    @classmethod
    def from_json(cls, raw: Mapping[str, Any], name: str | None = None) -> MethodResult:
        try:
            constructs = list(raw["constructs"])
            per = {c: float(raw["per_construct"][c]) for c in constructs}
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"accuracy document lacks constructs/per_construct: {exc!r}") from exc
        label = name or raw.get("method")
        if not label:
            raise InputError("accuracy document has no method name; pass one explicitly")
        return cls(str(label), per, raw.get("reference_total"))


@dataclass(frozen=True)
class ComparisonTable:
    test_name: str
    constructs: tuple[str, ...]
    rows: tuple[MethodResult, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "constructs", tuple(self.constructs))
        object.__setattr__(self, "rows", tuple(self.rows))
        names = [r.name for r in self.rows]
        if len(set(names)) != len(names):
            raise InputError(f"duplicate method names in comparison: {names}")
        for r in self.rows:
            if set(r.per_construct) != set(self.constructs):
                raise InputError(
                    f"method {r.name!r} covers constructs {sorted(r.per_construct)}, "
                    f"table expects {list(self.constructs)}"
                )

    @property
    def columns(self) -> list[str]:
        return list(self.constructs) + ["Total"]


def render_table(c: ComparisonTable, format: TableFormat = "markdown") -> str:
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([c.test_name] + c.columns)
        for r in c.rows:
            w.writerow([r.name] + [format_pct(r.per_construct[k]) for k in c.constructs] + [format_pct(r.total)])
        return buf.getvalue()
    if format != "markdown":
        raise InputError(f"unknown table format {format!r}")
    lines = [
        "| " + " | ".join([c.test_name] + c.columns) + " |",
        "|" + "|".join(["---"] * (len(c.columns) + 1)) + "|",
    ]
    notes = []
    for r in c.rows:
        total = format_pct(r.total) + "%"
        if r.reference_total is not None and abs(r.reference_total - r.total) > 0.05:
            notes.append(f"[{len(notes) + 1}] {r.name}: reported total {format_pct(r.reference_total)}%, "
                         f"macro mean of the row {format_pct(r.total)}%")
            total += f" [{len(notes)}]"
        cells = [format_pct(r.per_construct[k]) + "%" for k in c.constructs]
        lines.append("| " + " | ".join([r.name] + cells + [total]) + " |")
    if notes:
        lines.append("")
        lines.extend(notes)
    return "\n".join(lines) + "\n"


def parse_table_csv(text: str) -> ComparisonTable:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][-1] != "Total":
        raise InputError("comparison CSV must end its header with 'Total'")
    test_name, constructs = rows[0][0], tuple(rows[0][1:-1])
    methods = []
    for row in rows[1:]:
        per = {k: float(v) for k, v in zip(constructs, row[1:-1])}
        methods.append(MethodResult(row[0], per, float(row[-1])))
    return ComparisonTable(test_name, constructs, tuple(methods))


def accuracy_csv(report: AccuracyReport, method: str = "method") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method"] + list(report.constructs) + ["macro", "micro"])
    w.writerow(
        [method]
        + [format_pct(100.0 * report.per_construct[c]) for c in report.constructs]
        + [format_pct(100.0 * report.macro), format_pct(100.0 * report.micro)]
    )
    return buf.getvalue()


def radar_data(r: AccuracyReport) -> list[tuple[str, float]]:
    """(construct, accuracy in [0, 1]) in construct order."""
    per = r.per_construct
    return [(c, per[c]) for c in r.constructs]


def radar_svg(records: Sequence[tuple[str, float]], title: str = "", size: int = 400) -> str:
    """Minimal SVG radar: grid rings, one spoke per construct, accuracy polygon, labels.

    Spokes start at 12 o'clock and go clockwise.
    """
    k = len(records)
    if k < 3:
        raise InputError(f"a radar plot needs at least 3 spokes, got {k}")
    cx = cy = size / 2
    radius = size * 0.32

    def point(idx: int, frac: float) -> tuple[float, float]:
        angle = -math.pi / 2 + 2 * math.pi * idx / k
        return cx + radius * frac * math.cos(angle), cy + radius * frac * math.sin(angle)

    def pts(fracs: Iterable[float]) -> str:
        return " ".join(f"{x:.3f},{y:.3f}" for x, y in (point(i, f) for i, f in enumerate(fracs)))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{cx:.3f}" y="20" text-anchor="middle" font-size="14">{_escape(title)}</text>')
    for ring in (0.25, 0.5, 0.75, 1.0):
        out.append(f'<polygon class="ring" points="{pts([ring] * k)}" fill="none" stroke="#cccccc"/>')
    for i, (label, _) in enumerate(records):
        x, y = point(i, 1.0)
        lx, ly = point(i, 1.18)
        out.append(f'<line class="spoke" x1="{cx:.3f}" y1="{cy:.3f}" x2="{x:.3f}" y2="{y:.3f}" stroke="#999999"/>')
        out.append(f'<text x="{lx:.3f}" y="{ly:.3f}" text-anchor="middle" font-size="12">{_escape(label)}</text>')
    out.append(
        f'<polygon class="accuracy" points="{pts(v for _, v in records)}" '
        'fill="#1f77b4" fill-opacity="0.3" stroke="#1f77b4" stroke-width="2"/>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text: str) -> str:
    return escape(text, {'"': "&quot;"})


def assignment_grid(assignments: Iterable[_Assigned], q: Questionnaire) -> str:
    """Construct x item CSV grid; items grouped by declared construct.

    A cell holds 1 where the item was assigned, 0 elsewhere; a tied item has
    "T" in each of its tied constructs and no 1.
    """
    by_item = {a.item_id: a for a in assignments}
    missing = [i for i in q.item_ids if i not in by_item]
    if missing:
        raise InputError(f"no assignment for items {missing}")
    ordered = [it.id for group in q.items_by_construct().values() for it in group]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["construct"] + ordered)
    for c in q.construct_ids:
        row = [c]
        for iid in ordered:
            a = by_item[iid]
            if a.tie:
                row.append("T" if c in a.winners else "0")
            else:
                row.append("1" if a.assigned_construct == c else "0")
        w.writerow(row)
    return buf.getvalue()


@dataclass(frozen=True)
class Agreement:
    observed_agreement: float
    disagreements: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"observed_agreement": self.observed_agreement, "disagreements": list(self.disagreements)}


def agreement(a: Iterable[_Assigned], b: Iterable[_Assigned]) -> Agreement:
    """Share of items that both sources assign to the same construct.

    A tie on either side counts as a disagreement.
    """
    left = {x.item_id: x.assigned_construct for x in a}
    right = {x.item_id: x.assigned_construct for x in b}
    if set(left) != set(right):
        only_a = sorted(set(left) - set(right))
        only_b = sorted(set(right) - set(left))
        raise InputError(f"item sets differ: only in first {only_a}, only in second {only_b}")
    if not left:
        raise InputError("no assignments to compare")
    differ = tuple(i for i in left if left[i] is None or left[i] != right[i])
    return Agreement((len(left) - len(differ)) / len(left), differ)


@dataclass(frozen=True)
class SimpleAssignment:
    """Assignment read back from an exported CSV."""

    item_id: str
    assigned_construct: str | None
    tie: bool
    winners: tuple[str, ...] = ()


def read_assignments_csv(text: str) -> list[SimpleAssignment]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or not {"item_id", "assigned", "tie"} <= set(reader.fieldnames):
        raise InputError("assignment CSV needs item_id, assigned and tie columns")
    out = []
    for row in reader:
        tie = row["tie"].strip().lower() == "true"
        assigned = None if tie or row["assigned"] == "AMBIGUOUS" else row["assigned"]
        out.append(SimpleAssignment(row["item_id"], assigned, tie))
    return out
