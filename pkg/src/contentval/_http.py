"""JSON-over-HTTP POST with bounded retries and exponential backoff."""

from __future__ import annotations

import logging
import os
import time
from typing import Any

import requests

from contentval.errors import RemoteError

log = logging.getLogger(__name__)

RETRYABLE_STATUS = frozenset({408, 425, 429, 500, 502, 503, 504})


def auth_headers(token_env: str | None) -> dict[str, str]:
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(token_env) if token_env else None
    if token:
        headers["Authorization"] = f"Bearer {token}"
    return headers


def post_json(
    url: str,
    payload: dict[str, Any],
    *,
    headers: dict[str, str],
    timeout: float,
    max_retries: int,
    backoff: float,
    session: requests.Session | None = None,
) -> Any:
    """POST ``payload`` and return the decoded JSON body.

    Transport errors and retryable statuses are retried up to ``max_retries``
    times, sleeping ``backoff * 2**attempt`` seconds in between. Other 4xx
    responses fail immediately.
    """
    poster = session.post if session is not None else requests.post
    last_error = "no attempt made"
    for attempt in range(max_retries + 1):
        if attempt:
            delay = backoff * (2 ** (attempt - 1))
            log.warning("retry %d/%d for %s after %s (sleep %.3fs)", attempt, max_retries, url, last_error, delay)
            time.sleep(delay)
        try:
            resp = poster(url, json=payload, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            last_error = f"{type(exc).__name__}: {exc}"
            continue
        if resp.status_code in RETRYABLE_STATUS:
            last_error = f"HTTP {resp.status_code}"
            continue
        if resp.status_code >= 400:
            raise RemoteError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
        except ValueError as exc:
            raise RemoteError(f"{url}: response is not JSON") from exc
        if attempt:
            log.info("%s succeeded after %d retries", url, attempt)
        return body
    raise RemoteError(f"{url}: giving up after {max_retries} retries ({last_error})")
