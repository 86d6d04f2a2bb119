"""All-pairs dataset generation for fine-tuning sentence similarity models.

Pairs are streamed in lexicographic (a, b) order with a < b, scored in
batches by an external cross-encoder service and written to JSONL or CSV.
The writer keeps a ``<output>.ckpt`` file with the number of fully written
records so an interrupted run can resume where it stopped.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Literal, NamedTuple, Sequence

import requests

from contentval import _http
from contentval.errors import ConfigError, InputError, RemoteError

log = logging.getLogger(__name__)

HISTOGRAM_BINS = 20
DatasetFormat = Literal["jsonl", "csv"]
Scorer = Callable[[Sequence[tuple[str, str]]], Sequence[float]]


@dataclass(frozen=True)
class ItemPool:
    ids: tuple[str, ...]
    texts: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.texts):
            raise InputError("item pool ids and texts differ in length")
        seen: set[str] = set()
        for iid, text in zip(self.ids, self.texts):
            if iid in seen:
                raise InputError(f"duplicate pool item id {iid!r}")
            seen.add(iid)
            if not text.strip():
                raise InputError(f"pool item {iid!r} has empty text")

    @property
    def n(self) -> int:
        return len(self.ids)

    @classmethod
    def from_pairs(cls, rows: Iterable[tuple[str, str]]) -> ItemPool:
        rows = list(rows)
        return cls(tuple(r[0] for r in rows), tuple(r[1] for r in rows))


def load_pool(path: str | Path) -> ItemPool:
    """Read an ``id,text`` CSV."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    rows = []
    seen: dict[str, int] = {}
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["id", "text"]:
            raise InputError(f"{path}:1: expected header id,text")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise InputError(f"{path}:{lineno}: expected 2 columns")
            iid, text = row[0].strip(), row[1]
            if iid in seen:
                raise InputError(f"{path}:{lineno}: duplicate pool item id {iid!r} (first on line {seen[iid]})")
            if not text.strip():
                raise InputError(f"{path}:{lineno}: empty text for {iid!r}")
            seen[iid] = lineno
            rows.append((iid, text))
    return ItemPool.from_pairs(rows)


def count_pairs(n: int, k: int = 2) -> int:
    """Number of k-subsets of n items; 0 when k > n."""
    if n < 0 or k < 0:
        raise InputError(f"count_pairs needs non-negative n and k, got n={n}, k={k}")
    return math.comb(n, k)


class PairRecord(NamedTuple):
    index_a: int
    index_b: int
    text_a: str
    text_b: str
    score: float | None = None


def pair_at(offset: int, n: int) -> tuple[int, int]:
    """The (a, b) pair at position ``offset`` of the lexicographic enumeration."""
    total = count_pairs(n)
    if not 0 <= offset < total:
        raise InputError(f"pair offset {offset} outside 0..{total - 1}")
    a = 0
    row = n - 1
    while offset >= row:
        offset -= row
        a += 1
        row -= 1
    return a, a + 1 + offset


def enumerate_pairs(pool: ItemPool, start: int = 0) -> Iterator[PairRecord]:
    """Yield every unordered pair once, skipping the first ``start`` records."""
    n = pool.n
    if start >= count_pairs(n):
        return
    texts = pool.texts
    a0, b0 = pair_at(start, n) if start else (0, 1)
    for a in range(a0, n - 1):
        ta = texts[a]
        for b in range(b0 if a == a0 else a + 1, n):
            yield PairRecord(a, b, ta, texts[b])


def count_only(pool: ItemPool) -> int:
    """Walk the full enumeration without scoring and return its length."""
    return sum(1 for _ in enumerate_pairs(pool))


@dataclass(frozen=True)
class ScorerConfig:
    base_url: str
    batch_size: int = 64
    max_retries: int = 3
    timeout: float = 30.0
    token_env: str | None = "SCORER_API_KEY"
    max_in_flight: int = 1
    backoff: float = 0.5

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.max_in_flight < 1:
            raise ConfigError(f"max_in_flight must be >= 1, got {self.max_in_flight}")

    @property
    def endpoint(self) -> str:
        return self.base_url.rstrip("/") + "/score"


class HttpScorer:
    """Scores text pairs through ``POST {base_url}/score``."""

    def __init__(self, cfg: ScorerConfig, session: requests.Session | None = None):
        self.cfg = cfg
        self.session = session

    def __call__(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        body = _http.post_json(
            self.cfg.endpoint,
            {"pairs": [[a, b] for a, b in pairs]},
            headers=_http.auth_headers(self.cfg.token_env),
            timeout=self.cfg.timeout,
            max_retries=self.cfg.max_retries,
            backoff=self.cfg.backoff,
            session=self.session,
        )
        scores = body.get("scores") if isinstance(body, dict) else None
        if not isinstance(scores, list):
            raise RemoteError(f"{self.cfg.endpoint}: response has no 'scores' list")
        return scores


def _checked_scores(batch: list[PairRecord], scores: Sequence[float]) -> list[PairRecord]:
    if len(scores) != len(batch):
        raise RemoteError(f"scorer count mismatch: sent {len(batch)} pairs, got {len(scores)} scores")
    out = []
    for rec, s in zip(batch, scores):
        if isinstance(s, bool) or not isinstance(s, (int, float)) or not math.isfinite(s):
            raise RemoteError(f"scorer returned a non-numeric score {s!r} for pair ({rec.index_a}, {rec.index_b})")
        if not -1.0 <= s <= 1.0:
            raise RemoteError(f"score out of range: {s!r} for pair ({rec.index_a}, {rec.index_b})")
        out.append(rec._replace(score=float(s)))
    return out


def score_pairs(
    stream: Iterable[PairRecord],
    cfg: ScorerConfig,
    scorer: Scorer | None = None,
) -> Iterator[PairRecord]:
    """Attach scores to ``stream`` batch by batch, preserving order.

    Up to ``cfg.max_in_flight`` batches are requested concurrently; output
    order is the input order regardless of completion order.
    """
    scorer = scorer or HttpScorer(cfg)
    it = iter(stream)

    def batches() -> Iterator[list[PairRecord]]:
        while True:
            batch = list(itertools.islice(it, cfg.batch_size))
            if not batch:
                return
            yield batch

    def run(batch: list[PairRecord]) -> list[PairRecord]:
        return _checked_scores(batch, scorer([(r.text_a, r.text_b) for r in batch]))

    if cfg.max_in_flight == 1:
        for batch in batches():
            yield from run(batch)
        return
    with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
        pending: deque = deque()
        for batch in batches():
            pending.append(pool.submit(run, batch))
            if len(pending) >= cfg.max_in_flight:
                yield from pending.popleft().result()
        while pending:
            yield from pending.popleft().result()


def histogram_bin(score: float) -> int:
    return min(max(int((score + 1.0) * HISTOGRAM_BINS / 2.0), 0), HISTOGRAM_BINS - 1)


def histogram_edges() -> list[float]:
    return [-1.0 + 2.0 * k / HISTOGRAM_BINS for k in range(HISTOGRAM_BINS + 1)]


@dataclass
class ExportSummary:
    records_written: int = 0
    score_histogram: list[int] = field(default_factory=lambda: [0] * HISTOGRAM_BINS)

    def add(self, score: float) -> None:
        self.records_written += 1
        self.score_histogram[histogram_bin(score)] += 1

    def to_dict(self) -> dict:
        return {
            "records_written": self.records_written,
            "score_histogram": {"bin_edges": histogram_edges(), "counts": list(self.score_histogram)},
        }


def _format_record(rec: PairRecord, format: DatasetFormat) -> str:
    if format == "jsonl":
        return json.dumps({"text_a": rec.text_a, "text_b": rec.text_b, "score": rec.score}, ensure_ascii=False) + "\n"
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow([rec.text_a, rec.text_b, repr(rec.score)])
    return buf.getvalue()


CSV_HEADER = "text_a,text_b,score\n"


def checkpoint_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".ckpt")


def _write_checkpoint(path: Path, count: int) -> None:
    ckpt = checkpoint_path(path)
    tmp = ckpt.with_name(ckpt.name + ".tmp")
    tmp.write_text(f"{count}\n", encoding="ascii")
    os.replace(tmp, ckpt)


def read_checkpoint(path: str | Path) -> int:
    ckpt = checkpoint_path(path)
    if not ckpt.is_file():
        return 0
    text = ckpt.read_text(encoding="ascii").strip()
    if not text.isdigit():
        raise InputError(f"{ckpt}: corrupt checkpoint {text!r}")
    return int(text)


def read_dataset(path: str | Path, format: DatasetFormat = "jsonl") -> Iterator[PairRecord]:
    """Parse an exported dataset back into records (indices are not stored and read as -1)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        if format == "jsonl":
            for lineno, line in enumerate(fh, start=1):
                try:
                    rec = json.loads(line)
                    yield PairRecord(-1, -1, rec["text_a"], rec["text_b"], float(rec["score"]))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise InputError(f"{path}:{lineno}: malformed dataset record") from exc
        elif format == "csv":
            reader = csv.reader(fh)
            if next(reader, None) != ["text_a", "text_b", "score"]:
                raise InputError(f"{path}:1: expected header text_a,text_b,score")
            for row in reader:
                yield PairRecord(-1, -1, row[0], row[1], float(row[2]))
        else:
            raise ConfigError(f"unknown dataset format {format!r}")


def _prepare_resume(path: Path, format: DatasetFormat) -> ExportSummary:
    # Keep exactly the checkpointed records: re-serialize them to find the byte
    # offset, verify the prefix, and drop anything written after it.
    done = read_checkpoint(path)
    summary = ExportSummary()
    if not path.is_file():
        if done:
            raise InputError(f"{path}: checkpoint says {done} records but the output file is missing")
        return summary
    offset = len(CSV_HEADER.encode()) if format == "csv" else 0
    for rec in itertools.islice(read_dataset(path, format), done):
        offset += len(_format_record(rec, format).encode("utf-8"))
        summary.add(rec.score)
    if summary.records_written != done:
        raise InputError(f"{path}: checkpoint says {done} records but the file holds {summary.records_written}")
    with path.open("r+b") as fh:
        fh.truncate(offset)
    return summary


def export_dataset(
    stream: Iterable[PairRecord],
    path: str | Path,
    format: DatasetFormat = "jsonl",
    *,
    resume: bool = False,
    checkpoint_every: int = 1000,
) -> ExportSummary:
    """Write scored records and return the count and a 20-bin score histogram over [-1, 1].

    With ``resume``, the file is cut back to its checkpointed length and new
    records are appended; the returned summary covers the whole file.
    """
    if format not in ("jsonl", "csv"):
        raise ConfigError(f"unknown dataset format {format!r}; expected 'jsonl' or 'csv'")
    path = Path(path)
    if resume:
        summary = _prepare_resume(path, format)
        mode = "a"
    else:
        summary = ExportSummary()
        mode = "w"
    since_ckpt = 0
    with path.open(mode, newline="", encoding="utf-8") as fh:
        if format == "csv" and fh.tell() == 0:
            fh.write(CSV_HEADER)
        try:
            for rec in stream:
                if rec.score is None:
                    raise InputError(f"pair ({rec.index_a}, {rec.index_b}) is unscored")
                fh.write(_format_record(rec, format))
                summary.add(rec.score)
                since_ckpt += 1
                if since_ckpt >= checkpoint_every:
                    fh.flush()
                    _write_checkpoint(path, summary.records_written)
                    since_ckpt = 0
        finally:
            fh.flush()
            _write_checkpoint(path, summary.records_written)
    return summary


def build_dataset(
    pool: ItemPool,
    cfg: ScorerConfig,
    path: str | Path,
    format: DatasetFormat = "jsonl",
    *,
    resume: bool = False,
    scorer: Scorer | None = None,
) -> ExportSummary:
    """Enumerate, score and export every pair of ``pool``; resumable after failures."""
    start = read_checkpoint(path) if resume else 0
    if start:
        log.info("resuming %s at record %d of %d", path, start, count_pairs(pool.n))
    stream = score_pairs(enumerate_pairs(pool, start=start), cfg, scorer)
    return export_dataset(stream, path, format, resume=resume, checkpoint_every=cfg.batch_size)
