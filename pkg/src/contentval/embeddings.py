"""Per-item embedding storage (JSONL and VLEMB1 binary) and HTTP provider fetching."""

from __future__ import annotations

import json
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import requests

from contentval import _http
from contentval.errors import ConfigError, InputError, RemoteError
from contentval.model import Item

log = logging.getLogger(__name__)

MAGIC = b"VLEMB1"
_U32 = struct.Struct("<I")

Format = Literal["jsonl", "binary"]


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Row ``i`` of ``rows`` is the vector of ``item_ids[i]``.

    Rows are held as float32, the precision of the binary format, and are
    never normalized.
    """

    item_ids: tuple[str, ...]
    rows: np.ndarray

    def __post_init__(self) -> None:
        ids = tuple(str(i) for i in self.item_ids)
        rows = np.array(self.rows, dtype=np.float32, copy=True)
        if rows.ndim != 2:
            raise InputError(f"embedding rows must be a 2-D matrix, got shape {rows.shape}")
        if rows.shape[0] != len(ids):
            raise InputError(f"{rows.shape[0]} embedding rows for {len(ids)} item ids")
        if rows.shape[1] < 1:
            raise InputError("embedding dimension must be positive")
        seen: set[str] = set()
        for pos, iid in enumerate(ids):
            if iid in seen:
                raise InputError(f"duplicate item_id {iid!r} at row {pos}")
            seen.add(iid)
        finite = np.isfinite(rows).all(axis=1)
        if not finite.all():
            pos = int(np.flatnonzero(~finite)[0])
            raise InputError(f"non-finite value in embedding for item {ids[pos]!r} (row {pos})")
        zero = ~rows.any(axis=1)
        if zero.any():
            pos = int(np.flatnonzero(zero)[0])
            raise InputError(f"zero vector for item {ids[pos]!r} (row {pos})")
        rows.flags.writeable = False
        object.__setattr__(self, "item_ids", ids)
        object.__setattr__(self, "rows", rows)

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def __len__(self) -> int:
        return len(self.item_ids)

    def row(self, item_id: str) -> np.ndarray:
        return self.rows[self.item_ids.index(item_id)]

    def aligned_to(self, item_ids: Sequence[str]) -> EmbeddingMatrix:
        """Reorder (and subset) rows to follow ``item_ids``."""
        index = {iid: k for k, iid in enumerate(self.item_ids)}
        missing = [i for i in item_ids if i not in index]
        if missing:
            raise InputError(f"missing embedding for item {missing[0]!r} ({len(missing)} missing)")
        return EmbeddingMatrix(tuple(item_ids), self.rows[[index[i] for i in item_ids]])

    def equals(self, other: EmbeddingMatrix) -> bool:
        return self.item_ids == other.item_ids and np.array_equal(self.rows, other.rows)


def _load_jsonl(path: Path) -> EmbeddingMatrix:
    ids: list[str] = []
    vectors: list[list[float]] = []
    dim = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                iid = str(rec["item_id"])
                vec = rec["vector"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise InputError(f"{path}:{lineno}: expected {{'item_id', 'vector'}} record ({exc})") from exc
            if not isinstance(vec, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in vec):
                raise InputError(f"{path}:{lineno}: vector for {iid!r} must be a list of numbers")
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise InputError(f"{path}:{lineno}: inconsistent dimension {len(vec)} for {iid!r} (expected {dim})")
            if not all(math.isfinite(x) for x in vec):
                raise InputError(f"{path}:{lineno}: non-finite value in vector for {iid!r}")
            if not any(vec):
                raise InputError(f"{path}:{lineno}: zero vector for {iid!r}")
            ids.append(iid)
            vectors.append(vec)
    if not ids:
        raise InputError(f"{path}: no embedding records")
    try:
        return EmbeddingMatrix(tuple(ids), np.asarray(vectors, dtype=np.float64))
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from exc


def _load_binary(path: Path) -> EmbeddingMatrix:
    data = path.read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise InputError(f"{path}: not a VLEMB1 file")
    pos = len(MAGIC)
    if len(data) < pos + 4:
        raise InputError(f"{path}: truncated header")
    (dim,) = _U32.unpack_from(data, pos)
    pos += 4
    if dim == 0:
        raise InputError(f"{path}: dimension 0")
    ids: list[str] = []
    chunks: list[np.ndarray] = []
    while pos < len(data):
        if len(data) < pos + 4:
            raise InputError(f"{path}: truncated record at byte {pos}")
        (n,) = _U32.unpack_from(data, pos)
        pos += 4
        end = pos + n + 4 * dim
        if len(data) < end:
            raise InputError(f"{path}: truncated record at byte {pos - 4}")
        ids.append(data[pos : pos + n].decode("utf-8"))
        chunks.append(np.frombuffer(data, dtype="<f4", count=dim, offset=pos + n))
        pos = end
    if not ids:
        raise InputError(f"{path}: no embedding records")
    try:
        return EmbeddingMatrix(tuple(ids), np.vstack(chunks).astype(np.float32))
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from exc


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Load a JSONL or VLEMB1 file; the format is sniffed from the magic bytes."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    with path.open("rb") as fh:
        head = fh.read(len(MAGIC))
    if head == MAGIC:
        return _load_binary(path)
    return _load_jsonl(path)


def save_embeddings(m: EmbeddingMatrix, path: str | Path, format: Format = "jsonl") -> None:
    path = Path(path)
    if format == "binary":
        parts = [MAGIC, _U32.pack(m.dim)]
        rows = m.rows.astype("<f4", copy=False)
        for iid, row in zip(m.item_ids, rows):
            raw = iid.encode("utf-8")
            parts += [_U32.pack(len(raw)), raw, row.tobytes()]
        path.write_bytes(b"".join(parts))
    elif format == "jsonl":
        with path.open("w", encoding="utf-8") as fh:
            for iid, row in zip(m.item_ids, m.rows):
                fh.write(json.dumps({"item_id": iid, "vector": [float(x) for x in row]}, ensure_ascii=False))
                fh.write("\n")
    else:
        raise ConfigError(f"unknown embedding format {format!r}; expected 'jsonl' or 'binary'")


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str
    model_name: str
    batch_size: int = 16
    max_retries: int = 3
    timeout: float = 30.0
    token_env: str | None = "EMBEDDINGS_API_KEY"
    max_in_flight: int = 1
    backoff: float = 0.5
    extra_headers: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.max_in_flight < 1:
            raise ConfigError(f"max_in_flight must be >= 1, got {self.max_in_flight}")

    @property
    def endpoint(self) -> str:
        return self.base_url.rstrip("/") + "/embeddings"


def _embed_batch(cfg: ProviderConfig, texts: list[str], session: requests.Session | None) -> list[list[float]]:
    headers = {**_http.auth_headers(cfg.token_env), **cfg.extra_headers}
    body = _http.post_json(
        cfg.endpoint,
        {"model": cfg.model_name, "input": texts},
        headers=headers,
        timeout=cfg.timeout,
        max_retries=cfg.max_retries,
        backoff=cfg.backoff,
        session=session,
    )
    data = body.get("data") if isinstance(body, dict) else None
    if not isinstance(data, list):
        raise RemoteError(f"{cfg.endpoint}: response has no 'data' list")
    if len(data) != len(texts):
        raise RemoteError(f"{cfg.endpoint}: count mismatch: sent {len(texts)} texts, got {len(data)} vectors")
    out: list[list[float] | None] = [None] * len(texts)
    for entry in data:
        try:
            idx = int(entry["index"])
            vec = entry["embedding"]
        except (KeyError, TypeError, ValueError) as exc:
            raise RemoteError(f"{cfg.endpoint}: malformed data entry {entry!r:.80}") from exc
        if not 0 <= idx < len(texts) or out[idx] is not None:
            raise RemoteError(f"{cfg.endpoint}: bad or repeated index {idx}")
        out[idx] = vec
    return out  # type: ignore[return-value]


def fetch_embeddings(
    cfg: ProviderConfig,
    items: Sequence[Item],
    session: requests.Session | None = None,
) -> EmbeddingMatrix:
    """Embed item texts verbatim through ``POST {base_url}/embeddings``.

    Batches may run concurrently (``cfg.max_in_flight``); results are assembled
    by item position, so the output does not depend on completion order or on
    the batch size. Any batch failing after its retries fails the whole call.
    """
    if not items:
        raise InputError("no items to embed")
    texts = [it.text for it in items]
    batches = [texts[i : i + cfg.batch_size] for i in range(0, len(texts), cfg.batch_size)]
    log.info("embedding %d items in %d batches via %s", len(texts), len(batches), cfg.endpoint)
    if cfg.max_in_flight == 1:
        results = [_embed_batch(cfg, b, session) for b in batches]
    else:
        with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
            results = list(pool.map(lambda b: _embed_batch(cfg, b, session), batches))
    vectors = [vec for batch in results for vec in batch]
    dims = {len(v) if isinstance(v, list) else -1 for v in vectors}
    if len(dims) != 1 or -1 in dims:
        raise RemoteError(f"{cfg.endpoint}: inconsistent dimensions in provider response: {sorted(dims)}")
    try:
        matrix = np.asarray(vectors, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise RemoteError(f"{cfg.endpoint}: non-numeric embedding values") from exc
    try:
        return EmbeddingMatrix(tuple(it.id for it in items), matrix)
    except InputError as exc:
        raise RemoteError(f"{cfg.endpoint}: provider returned unusable vectors: {exc}") from exc
