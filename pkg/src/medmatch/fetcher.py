"""Sequential, rate-limited retrieval of WoS record pages.

One request is in flight at a time. Consecutive requests are spaced so
that each one starts at least ``min_interval`` after the previous one
*finished*. That is stricter than spacing request starts, and it also keeps
the gaps seen by the server at or above ``min_interval``.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import cached_property
from typing import Callable, Iterable, Iterator, List, Optional, Tuple, Union

import requests

from . import __version__
from .errors import FetchFailed, HardStop
from .url_template import RecordUrlTemplate, url_for_doc

log = logging.getLogger(__name__)

DEFAULT_USER_AGENT = f"medmatch/{__version__} (sequential record matcher)"

Progress = Callable[[int, int], None]


@dataclass(frozen=True)
class FetchPolicy:
    """Politeness settings. Durations are in seconds."""

    min_interval: float = 2.0
    max_retries: int = 3
    backoff_base: float = 1.0
    timeout: float = 30.0
    user_agent: str = DEFAULT_USER_AGENT

    def __post_init__(self):
        if self.min_interval < 0:
            raise ValueError("min_interval must be >= 0")
        if self.max_retries < 0 or int(self.max_retries) != self.max_retries:
            raise ValueError("max_retries must be a non-negative integer")
        if self.backoff_base < 0:
            raise ValueError("backoff_base must be >= 0")
        if not self.timeout > 0:
            raise ValueError("timeout must be > 0")

    def backoff(self, retry: int) -> float:
        """Delay before retry number ``retry`` (1-based): base, 2*base, 4*base, ..."""
        return self.backoff_base * 2 ** (retry - 1)


@dataclass(frozen=True)
class RecordPage:
    doc_index: int
    url: str
    content: bytes
    status: int = 200
    fetched_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    @cached_property
    def body(self) -> str:
        return self.content.decode("utf-8", errors="replace")


def _retryable(status: int) -> bool:
    return status >= 500 or status == 429


class Fetcher:
    """Fetches record pages for one URL template under one FetchPolicy.

    ``clock`` and ``sleep`` are injectable so pacing can be tested without
    waiting in real time.
    """

    def __init__(self, template: RecordUrlTemplate, policy: Optional[FetchPolicy] = None,
                 session: Optional[requests.Session] = None,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.template = template
        self.policy = policy or FetchPolicy()
        self._own_session = session is None
        self.session = session or requests.Session()
        self.session.headers["User-Agent"] = self.policy.user_agent
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._last_end: Optional[float] = None
        self.attempts: dict = {}

    def close(self):
        if self._own_session:
            self.session.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _pace(self, gap: float):
        if self._last_end is None:
            return
        remaining = self._last_end + gap - self._clock()
        while remaining > 0:
            self._sleep(remaining)
            remaining = self._last_end + gap - self._clock()

    def _attempt(self, url: str):
        try:
            return self.session.get(url, timeout=self.policy.timeout, allow_redirects=False)
        finally:
            self._last_end = self._clock()

    def fetch_page(self, k: int) -> RecordPage:
        """GET document ``k``, retrying timeouts, connection errors and 5xx/429.

        HTTP 403 raises HardStop at once. Other statuses outside 2xx, including
        redirects, raise FetchFailed without retrying.
        """
        url = url_for_doc(self.template, k)
        policy = self.policy
        with self._lock:
            attempt = 0
            while True:
                attempt += 1
                self.attempts[k] = attempt
                gap = policy.min_interval if attempt == 1 else max(policy.min_interval, policy.backoff(attempt - 1))
                self._pace(gap)
                try:
                    resp = self._attempt(url)
                except requests.RequestException as exc:
                    status, reason = None, f"{type(exc).__name__}: {exc}"
                    retry = isinstance(exc, (requests.Timeout, requests.ConnectionError))
                else:
                    status, reason = resp.status_code, resp.reason or ""
                    if 200 <= status < 300:
                        return RecordPage(k, url, resp.content, status)
                    if status == 403:
                        raise HardStop(k, status, "access refused; session expired or fair-use limit hit",
                                       attempt)
                    if 300 <= status < 400:
                        reason = f"redirect to {resp.headers.get('Location', '?')}"
                    retry = _retryable(status)
                if not retry or attempt > policy.max_retries:
                    raise FetchFailed(k, status, reason, attempt)
                log.info("doc %d: attempt %d failed (%s); retrying", k, attempt, status or reason)

    def iter_pages(self, doc_indices: Iterable[int], progress: Optional[Progress] = None,
                   total: Optional[int] = None) -> Iterator[Tuple[int, Union[RecordPage, FetchFailed]]]:
        """Yield ``(k, page_or_error)`` for each index in order.

        Per-document failures are yielded, not raised. HardStop propagates.
        """
        indices = list(doc_indices)
        total = total if total is not None else len(indices)
        for k in indices:
            if progress is not None:
                progress(k, total)
            try:
                yield k, self.fetch_page(k)
            except HardStop:
                raise
            except FetchFailed as exc:
                log.warning("%s", exc)
                yield k, exc

    def fetch_all(self, numdocs: int, progress: Optional[Progress] = None) -> List[Union[RecordPage, FetchFailed]]:
        if int(numdocs) < 1:
            raise ValueError("numdocs must be >= 1")
        return [r for _, r in self.iter_pages(range(1, numdocs + 1), progress, numdocs)]


def fetch_page(template: RecordUrlTemplate, k: int, policy: Optional[FetchPolicy] = None,
               session: Optional[requests.Session] = None) -> RecordPage:
    with Fetcher(template, policy, session) as f:
        return f.fetch_page(k)


def fetch_all(template: RecordUrlTemplate, numdocs: int, policy: Optional[FetchPolicy] = None,
              progress: Optional[Progress] = None,
              session: Optional[requests.Session] = None) -> List[Union[RecordPage, FetchFailed]]:
    with Fetcher(template, policy, session) as f:
        return f.fetch_all(numdocs, progress)
