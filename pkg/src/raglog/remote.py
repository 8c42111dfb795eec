"""Shared plumbing for remote embedding/completion backends.

Both remote clients speak JSON over HTTP POST and share the same retry
policy: exponential backoff starting at 500 ms, doubling per attempt, at most
5 attempts. Credentials come from the environment and are never logged.
"""
from __future__ import annotations

import logging
import os
import time
from typing import Any, Callable

import requests

log = logging.getLogger(__name__)

API_BASE_ENV = "RAGLOG_API_BASE"
API_KEY_ENV = "RAGLOG_API_KEY"

DEFAULT_MAX_ATTEMPTS = 5
DEFAULT_BACKOFF_BASE_S = 0.5
DEFAULT_BACKOFF_FACTOR = 2.0
DEFAULT_TIMEOUT_S = 60.0

# post(url, payload, headers) -> decoded JSON; raises TransientRemoteFailure to retry
PostFn = Callable[[str, dict, dict], Any]
SleepFn = Callable[[float], None]


class RemoteError(RuntimeError):
    """Remote backend failed after retries, or returned a malformed response."""


class UnavailableError(RemoteError):
    """No credential configured for a remote backend."""


class TransientRemoteFailure(Exception):
    """Internal marker for a retryable failure (timeouts, 5xx, 429)."""


def api_base(explicit: str | None = None) -> str:
    base = explicit or os.environ.get(API_BASE_ENV, "")
    if not base:
        raise UnavailableError(f"no API base URL configured (set {API_BASE_ENV})")
    return base.rstrip("/")


def api_key(explicit: str | None = None) -> str:
    key = explicit or os.environ.get(API_KEY_ENV, "")
    if not key:
        raise UnavailableError(f"credential missing (set {API_KEY_ENV})")
    return key


def default_post(url: str, payload: dict, headers: dict) -> Any:
    try:
        resp = requests.post(url, json=payload, headers=headers, timeout=DEFAULT_TIMEOUT_S)
    except requests.RequestException as exc:
        raise TransientRemoteFailure(str(exc)) from exc
    if resp.status_code == 429 or resp.status_code >= 500:
        raise TransientRemoteFailure(f"HTTP {resp.status_code}")
    if resp.status_code != 200:
        raise RemoteError(f"HTTP {resp.status_code}: {resp.text[:200]}")
    try:
        return resp.json()
    except ValueError as exc:
        raise RemoteError(f"response is not JSON: {exc}") from exc


def post_with_retries(
    url: str,
    payload: dict,
    headers: dict,
    *,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    post: PostFn | None = None,
    sleep: SleepFn | None = None,
) -> Any:
    """POST with exponential backoff on transient failures.

    ``post`` and ``sleep`` are injectable so tests can script failures without
    a network or a clock.
    """
    post = post or default_post
    sleep = sleep or time.sleep
    delay = DEFAULT_BACKOFF_BASE_S
    for attempt in range(1, max_attempts + 1):
        try:
            result = post(url, payload, headers)
            log.debug("remote call succeeded on attempt %d", attempt)
            return result
        except TransientRemoteFailure as exc:
            log.debug("remote attempt %d/%d failed: %s", attempt, max_attempts, exc)
            if attempt == max_attempts:
                raise RemoteError(f"failed after {max_attempts} attempts: {exc}") from exc
            sleep(delay)
            delay *= DEFAULT_BACKOFF_FACTOR
    raise AssertionError("unreachable")


def auth_headers(key: str) -> dict:
    return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
