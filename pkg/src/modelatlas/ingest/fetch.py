"""HTTP client for per-model metadata documents (``GET {endpoint}/{id}``)."""

from __future__ import annotations

import json
import logging
import time
import urllib.error
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

from ..core import ModelNode
from ..errors import HttpError, InvalidNode, MalformedRecord
from .metadata import record_to_node

log = logging.getLogger(__name__)

RETRYABLE = {408, 429, 500, 502, 503, 504}


def _get(url: str, model_id: str, attempts: int, backoff: float, timeout: float) -> bytes:
    for attempt in range(1, attempts + 1):
        try:
            with urllib.request.urlopen(url, timeout=timeout) as resp:
                return resp.read()
        except urllib.error.HTTPError as exc:
            if exc.code not in RETRYABLE or attempt == attempts:
                raise HttpError(model_id, exc.code, exc.reason or "request failed") from exc
            log.debug("%s: HTTP %s on attempt %d", model_id, exc.code, attempt)
        except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
            if attempt == attempts:
                raise HttpError(model_id, None, str(exc)) from exc
            log.debug("%s: %s on attempt %d", model_id, exc, attempt)
        time.sleep(backoff * 2 ** (attempt - 1))
    raise AssertionError("unreachable")


def fetch_one(endpoint_url: str, model_id: str, attempts: int = 3, backoff: float = 0.25,
              timeout: float = 10.0) -> ModelNode:
    url = endpoint_url.rstrip("/") + "/" + urllib.parse.quote(model_id, safe="/")
    body = _get(url, model_id, attempts, backoff, timeout)
    try:
        record = json.loads(body)
        node = record_to_node(record)
    except (ValueError, TypeError, InvalidNode) as exc:
        raise MalformedRecord(str(exc), model_id=model_id) from exc
    if node.id != model_id:
        raise MalformedRecord(f"endpoint returned id {node.id!r}", model_id=model_id)
    return node


def fetch_metadata(endpoint_url: str, ids: Sequence[str], attempts: int = 3, backoff: float = 0.25,
                   timeout: float = 10.0, workers: int = 4) -> tuple[list[ModelNode], list[HttpError | MalformedRecord]]:
    """Fetch every id independently; failures are collected per id, in input order.

    Retryable failures (network errors, 408/429/5xx) are retried with
    exponential backoff up to ``attempts`` tries.
    """

    def task(model_id: str) -> ModelNode | HttpError | MalformedRecord:
        try:
            return fetch_one(endpoint_url, model_id, attempts, backoff, timeout)
        except (HttpError, MalformedRecord) as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(task, ids))
    nodes = [r for r in results if isinstance(r, ModelNode)]
    errors = [r for r in results if not isinstance(r, ModelNode)]
    return nodes, errors
