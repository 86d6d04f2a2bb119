"""Seeded synthetic questionnaires with clustered embeddings, for tests and demos."""

from __future__ import annotations

import numpy as np

from contentval.embeddings import EmbeddingMatrix
from contentval.errors import GenerationError, InputError
from contentval.model import Construct, Item, Questionnaire

MAX_CENTROID_COSINE = 0.3


def make_centroids(rng: np.random.Generator, k: int, dim: int, max_tries: int = 1000) -> np.ndarray:
    """K random unit vectors whose pairwise cosines are all below 0.3."""
    for _ in range(max_tries):
        c = rng.standard_normal((k, dim))
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        gram = c @ c.T
        off = gram[~np.eye(k, dtype=bool)]
        if off.size == 0 or off.max() < MAX_CENTROID_COSINE:
            return c
    raise GenerationError(
        f"could not draw {k} centroids in {dim} dimensions with pairwise cosine < "
        f"{MAX_CENTROID_COSINE} after {max_tries} attempts"
    )


def synthesize(
    k: int = 5,
    per_construct: int = 10,
    dim: int = 768,
    sigma: float = 0.1,
    seed: int = 0,
    max_tries: int = 1000,
) -> tuple[Questionnaire, EmbeddingMatrix]:
    """Items of construct c are centroid_c plus isotropic gaussian noise of scale ``sigma``.

    All randomness comes from one generator seeded with ``seed``.
    """
    if k < 2:
        raise InputError(f"need K >= 2 constructs, got {k}")
    if per_construct < 2:
        raise InputError(f"need at least 2 items per construct, got {per_construct}")
    if dim < k:
        raise InputError(f"dimension {dim} must be >= K={k}")
    if sigma < 0:
        raise InputError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    centroids = make_centroids(rng, k, dim, max_tries)
    constructs = tuple(Construct(f"c{c + 1}", f"Construct {c + 1}") for c in range(k))
    items = []
    rows = []
    for c, construct in enumerate(constructs):
        for j in range(per_construct):
            iid = f"{construct.id}_{j + 1:02d}"
            items.append(Item(iid, f"synthetic item {j + 1} of {construct.label}", construct.id, "und"))
            rows.append(centroids[c] + sigma * rng.standard_normal(dim))
    q = Questionnaire(f"synthetic-K{k}-n{per_construct}-seed{seed}", constructs, tuple(items))
    return q, EmbeddingMatrix(q.item_ids, np.asarray(rows))
