"""Turn one sample WoS record URL into a generator of record URLs.

Only the ``doc`` query parameter is rewritten; every other byte of the
sample URL (parameter order, encoding, empty pieces, fragment) is kept.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass
from typing import Optional, Tuple
from urllib.parse import urlsplit

from .errors import MalformedDocParam, MissingDocParam, NotAUrl

log = logging.getLogger(__name__)

_POSITIVE = re.compile(r"[0-9]+")


class SearchMode(enum.Enum):
    ADVANCED = "AdvancedSearch"
    GENERAL = "GeneralSearch"
    OTHER = "Other"


@dataclass(frozen=True)
class RecordUrlTemplate:
    scheme_host_path: str
    # raw (key, value) pieces in original order; value is None for a bare "key" piece
    query_params: Tuple[Tuple[str, Optional[str]], ...]
    doc_param_index: int
    search_mode: SearchMode
    fragment: Optional[str] = None

    @property
    def doc(self) -> int:
        return int(self.query_params[self.doc_param_index][1])

    @property
    def host(self) -> str:
        return urlsplit(self.scheme_host_path).hostname or ""

    def render(self, k: int) -> str:
        key, raw = self.query_params[self.doc_param_index]
        # keep the sample's own spelling (e.g. zero padding) for its own index
        value = raw if int(raw) == k else str(k)
        pieces = []
        for i, (name, val) in enumerate(self.query_params):
            if i == self.doc_param_index:
                val = value
            pieces.append(name if val is None else f"{name}={val}")
        url = self.scheme_host_path + "?" + "&".join(pieces)
        if self.fragment is not None:
            url += "#" + self.fragment
        return url


def parse_record_url(url: str) -> RecordUrlTemplate:
    if not isinstance(url, str):
        raise NotAUrl(f"not a URL: {url!r}")
    try:
        parts = urlsplit(url)
    except ValueError as exc:
        raise NotAUrl(f"not a URL: {url!r} ({exc})") from exc
    if parts.scheme.lower() not in ("http", "https") or not parts.netloc or any(c.isspace() for c in url):
        raise NotAUrl(f"not an absolute http(s) URL: {url!r}")

    head, hash_sep, fragment = url.partition("#")
    base, q_sep, query = head.partition("?")
    if not q_sep:
        raise MissingDocParam(f"URL has no query string, so no doc parameter: {url!r}")

    params = []
    for piece in query.split("&"):
        name, eq, value = piece.partition("=")
        params.append((name, value if eq else None))

    doc_positions = [i for i, (name, _) in enumerate(params) if name == "doc"]
    if not doc_positions:
        raise MissingDocParam(f"no doc parameter in {url!r}")
    if len(doc_positions) > 1:
        raise MalformedDocParam(f"more than one doc parameter in {url!r}")
    doc_value = params[doc_positions[0]][1]
    if doc_value is None or not _POSITIVE.fullmatch(doc_value) or int(doc_value) < 1:
        raise MalformedDocParam(f"doc parameter is not a positive integer: {doc_value!r}")

    mode_value = next((v for n, v in params if n == "search_mode"), None)
    try:
        mode = SearchMode(mode_value) if mode_value != SearchMode.OTHER.value else SearchMode.OTHER
    except ValueError:
        mode = SearchMode.OTHER
    if mode is SearchMode.OTHER:
        log.warning("unrecognised search_mode %r; treating URL as a generic record link", mode_value)

    return RecordUrlTemplate(
        scheme_host_path=base,
        query_params=tuple(params),
        doc_param_index=doc_positions[0],
        search_mode=mode,
        fragment=fragment if hash_sep else None,
    )


def url_for_doc(template: RecordUrlTemplate, k: int) -> str:
    """The record URL for document ``k`` (1-based)."""
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise ValueError(f"document index must be a positive integer, got {k!r}")
    return template.render(int(k))
