"""On-disk fixtures shared by the CLI and acceptance tests."""

import csv

import numpy as np

from conftest import make_questionnaire
from contentval.embeddings import EmbeddingMatrix, save_embeddings
from contentval.model import save_questionnaire


def write_ratings(path, rows):
    """rows: iterable of (expert, item, construct, value)."""
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["expert_id", "item_id", "construct_id", "value"])
        w.writerows(rows)
    return path


def panel_fixture(tmp_path, n_experts=10, counts=(3, 3, 3)):
    """Every expert rates each item 2 on its declared construct and 0 elsewhere."""
    q = make_questionnaire(list(counts))
    save_questionnaire(q, tmp_path / "q.json")
    rows = [
        (f"e{x:02d}", it.id, c, 2 if c == it.declared_construct else 0)
        for x in range(n_experts)
        for it in q.items
        for c in q.construct_ids
    ]
    write_ratings(tmp_path / "ratings.csv", rows)
    return q, tmp_path / "q.json", tmp_path / "ratings.csv", rows


def two_d_files(tmp_path):
    q = make_questionnaire([2, 2], constructs=["A", "B"])
    e = EmbeddingMatrix(q.item_ids, np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=np.float64))
    save_questionnaire(q, tmp_path / "q2d.json")
    save_embeddings(e, tmp_path / "e2d.jsonl")
    return q, tmp_path / "q2d.json", tmp_path / "e2d.jsonl"


def write_pool(path, n):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "text"])
        w.writerows((f"p{k}", f"pool statement {k}") for k in range(n))
    return path
