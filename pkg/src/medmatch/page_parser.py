"""Pull the WoS accession number (UT) and the PMID out of a record page.

The page is scanned line by line for two fixed markers, ``UT=WOS:`` and
``NCBI_DB&PMID``. The first line carrying a marker wins. No HTML parsing is
done, so surrounding markup can change freely.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Iterator, Optional

from .errors import InvalidUt, MalformedMarker
from .ingest import Pmid

log = logging.getLogger(__name__)

UT_MARKER = "UT=WOS:"
PMID_MARKER = "NCBI_DB&PMID"

# a query-string value ends at '&'; in page markup it also ends at a quote,
# whitespace or an angle bracket
_TOKEN_END = re.compile(r"""[&"'<>\s]""")
_PMID_SEGMENT = re.compile(r"PMID=([0-9]+)")


class WosUt(str):
    """A WoS accession number stored without its ``WOS:`` prefix."""

    def __new__(cls, value):
        value = str(value)
        if not value or "&" in value or any(c.isspace() for c in value) \
                or value.startswith(("UT=", "WOS:")):
            raise InvalidUt(value)
        return super().__new__(cls, value)

    def __repr__(self):
        return f"WosUt({str.__repr__(self)})"


@dataclass(frozen=True)
class ParsedRecord:
    doc_index: int
    pmid: Optional[Pmid] = None
    ut: Optional[WosUt] = None


def _lines(body: str) -> Iterator[str]:
    for line in body.split("\n"):
        yield line[:-1] if line.endswith("\r") else line


def _token_after(line: str, start: int) -> str:
    end = _TOKEN_END.search(line, start)
    return line[start:end.start() if end else len(line)]


def _marker_lines(body: str, marker: str):
    return [line for line in _lines(body) if marker in line]


def extract_ut(body: str) -> Optional[WosUt]:
    lines = _marker_lines(body, UT_MARKER)
    if not lines:
        return None
    tokens = []
    for line in lines:
        token = _token_after(line, line.index(UT_MARKER) + len(UT_MARKER))
        if not tokens and not token:
            raise MalformedMarker(line, "empty UT")
        tokens.append(token)
    others = {t for t in tokens[1:] if t and t != tokens[0]}
    if others:
        log.warning("page has %d UT marker lines with different values; using %s, ignoring %s",
                    len(lines), tokens[0], ", ".join(sorted(others)))
    try:
        return WosUt(tokens[0])
    except InvalidUt:
        raise MalformedMarker(lines[0], f"bad UT {tokens[0]!r}") from None


def extract_pmid(body: str) -> Optional[Pmid]:
    lines = _marker_lines(body, PMID_MARKER)
    if not lines:
        return None
    line = lines[0]
    # "PMID" inside the marker, not any earlier occurrence on the line
    start = line.index(PMID_MARKER) + len(PMID_MARKER) - len("PMID")
    segment = _token_after(line, start)
    m = _PMID_SEGMENT.fullmatch(segment)
    if not m or int(m.group(1)) < 1:
        raise MalformedMarker(line, f"expected PMID=<digits>, got {segment!r}")
    if len(lines) > 1:
        log.debug("page has %d PMID marker lines; using the first", len(lines))
    return Pmid(int(m.group(1)))


def parse_page(page) -> ParsedRecord:
    """Parse a RecordPage (anything with ``body`` and ``doc_index``)."""
    body = page.body
    if not body.strip():
        log.warning("doc %s: empty page body", page.doc_index)
        return ParsedRecord(page.doc_index)
    return ParsedRecord(page.doc_index, extract_pmid(body), extract_ut(body))
