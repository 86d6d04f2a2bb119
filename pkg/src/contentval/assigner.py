"""Unsupervised item -> construct assignment from sentence embeddings.

Each item is compared with every other item by cosine similarity. For each
construct, the item's similarities to that construct's declared members are
averaged (leaving the item itself out), the K averages are turned into
probabilities with a softmax, and the most probable construct wins.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from contentval.embeddings import EmbeddingMatrix
from contentval.errors import InputError
from contentval.model import AccuracyReport, Questionnaire, score_assignments, validate_alignment

TIE_TOLERANCE = 1e-12


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise InputError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    item_ids: tuple[str, ...]
    values: np.ndarray


def similarity_matrix(e: EmbeddingMatrix) -> SimilarityMatrix:
    """All-pairs cosine similarity, computed in float64 and clipped to [-1, 1]."""
    if len(e) < 2:
        raise InputError(f"need at least 2 embedded items, got {len(e)}")
    x = e.rows.astype(np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    values = (x @ x.T) / np.outer(norms, norms)
    np.clip(values, -1.0, 1.0, out=values)
    values.flags.writeable = False
    return SimilarityMatrix(e.item_ids, values)


@dataclass(frozen=True, eq=False)
class ConstructMeans:
    item_ids: tuple[str, ...]
    construct_ids: tuple[str, ...]
    means: np.ndarray  # shape (N, K)


def construct_means(s: SimilarityMatrix, q: Questionnaire) -> ConstructMeans:
    """Mean similarity of each item to every construct's members, excluding itself.

    Sums run over columns in ascending item order so that results are
    reproducible bit for bit and match a plain double loop.
    """
    if tuple(s.item_ids) != q.item_ids:
        raise InputError("similarity matrix rows are not in questionnaire item order")
    cids = q.construct_ids
    code = np.array([cids.index(it.declared_construct) for it in q.items])
    n, k = len(code), len(cids)
    sizes = np.bincount(code, minlength=k)
    for c, size in enumerate(sizes):
        if size == 0:
            raise InputError(f"construct {cids[c]!r} has no items to average over")
    for i, it in enumerate(q.items):
        if sizes[code[i]] < 2:
            raise InputError(
                f"item {it.id!r}: construct {it.declared_construct!r} has no other items, "
                "so its exclude-self mean is empty"
            )
    sums = np.zeros((n, k))
    for j in range(n):
        col = s.values[:, j].copy()
        col[j] = 0.0
        sums[:, code[j]] += col
    counts = np.broadcast_to(sizes, (n, k)).astype(np.float64)
    counts[np.arange(n), code] -= 1.0
    means = sums / counts
    means.flags.writeable = False
    return ConstructMeans(q.item_ids, cids, means)


def softmax(row: Sequence[float] | np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Numerically stable softmax along the last axis."""
    if not temperature > 0:
        raise InputError(f"temperature must be positive, got {temperature}")
    x = np.asarray(row, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InputError("softmax input contains non-finite values")
    z = (x - x.max(axis=-1, keepdims=True)) / temperature
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ConstructAssignment:
    item_id: str
    probabilities: np.ndarray
    assigned_construct: str | None  # None when the top probability is shared
    declared_construct: str
    correct: bool
    tie: bool
    winners: tuple[str, ...]  # constructs sharing the top probability


def assign_from_means(cm: ConstructMeans, q: Questionnaire, temperature: float = 1.0) -> list[ConstructAssignment]:
    probs = softmax(cm.means, temperature)
    out = []
    for i, item in enumerate(q.items):
        p = probs[i]
        # Decide on the means, not the probabilities, so ties do not depend on temperature.
        m = cm.means[i]
        winners = np.flatnonzero(m >= m.max() - TIE_TOLERANCE)
        tie = len(winners) > 1
        assigned = None if tie else cm.construct_ids[int(winners[0])]
        out.append(
            ConstructAssignment(
                item_id=item.id,
                probabilities=p,
                assigned_construct=assigned,
                declared_construct=item.declared_construct,
                correct=assigned == item.declared_construct,
                tie=tie,
                winners=tuple(cm.construct_ids[int(w)] for w in winners),
            )
        )
    return out


def assign(e: EmbeddingMatrix, q: Questionnaire, temperature: float = 1.0) -> list[ConstructAssignment]:
    report = validate_alignment(q, e)
    report.raise_for_errors()
    aligned = e.aligned_to(q.item_ids)
    return assign_from_means(construct_means(similarity_matrix(aligned), q), q, temperature)


def accuracy(assignments: Iterable[ConstructAssignment], q: Questionnaire) -> AccuracyReport:
    return score_assignments(((a.item_id, a.assigned_construct) for a in assignments), q)


def assignments_csv(assignments: Iterable[ConstructAssignment], q: Questionnaire) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["item_id", "declared", "assigned", "correct", "tie"] + [f"p_{c}" for c in q.construct_ids])
    for a in assignments:
        w.writerow(
            [
                a.item_id,
                a.declared_construct,
                a.assigned_construct if a.assigned_construct is not None else "AMBIGUOUS",
                str(a.correct).lower(),
                str(a.tie).lower(),
            ]
            + [repr(float(p)) for p in a.probabilities]
        )
    return buf.getvalue()
