"""Reading PMID lists exported from the PubMed web interface."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from os import PathLike
from typing import Iterable, Optional, Union

from .errors import FileNotReadable, InvalidPmid, MalformedLine

log = logging.getLogger(__name__)

_DIGITS = re.compile(r"[0-9]+")


class Pmid(int):
    """A PubMed identifier. Behaves as an int; ``str()`` gives the bare digits."""

    def __new__(cls, value):
        if isinstance(value, bool):
            raise InvalidPmid(value)
        if isinstance(value, str):
            return validate_pmid(value)
        try:
            number = int(value)
        except (TypeError, ValueError):
            raise InvalidPmid(value) from None
        if number != value or number < 1:
            raise InvalidPmid(value)
        return super().__new__(cls, number)

    def __repr__(self):
        return f"Pmid({int(self)})"

    __str__ = int.__repr__


def validate_pmid(raw: str) -> Pmid:
    """Turn ``raw`` into a Pmid, accepting surrounding whitespace and leading zeros."""
    if not isinstance(raw, str):
        return Pmid(raw)
    text = raw.strip()
    if not _DIGITS.fullmatch(text) or int(text) < 1:
        raise InvalidPmid(raw)
    return int.__new__(Pmid, int(text))


@dataclass(frozen=True)
class PmidList:
    items: tuple = ()
    source_path: Optional[str] = None
    duplicates: int = 0
    warnings: tuple = field(default=(), compare=False)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def __bool__(self):
        return bool(self.items)


def dedupe(pmids: Iterable, source_path: Optional[str] = None) -> PmidList:
    """Drop repeated PMIDs, keeping the first occurrence of each."""
    seen = set()
    items = []
    dup = 0
    for p in pmids:
        p = Pmid(p)
        if p in seen:
            dup += 1
            continue
        seen.add(p)
        items.append(p)
    warnings = []
    if not items:
        warnings.append("empty input")
    if dup:
        warnings.append(f"{dup} duplicate PMID(s) removed")
    return PmidList(tuple(items), source_path, dup, tuple(warnings))


def parse_pmid_lines(text: str, source_path: Optional[str] = None) -> PmidList:
    raw_items = []
    for number, line in enumerate(text.split("\n"), start=1):
        content = line.strip()
        if not content:
            continue
        if not _DIGITS.fullmatch(content) or int(content) < 1:
            raise MalformedLine(number, content)
        raw_items.append(int.__new__(Pmid, int(content)))
    result = dedupe(raw_items, source_path)
    for w in result.warnings:
        log.warning("%s: %s", source_path or "<input>", w)
    return result


def parse_pmid_file(path: Union[str, PathLike], format: str = "plain_lines") -> PmidList:
    """Read one PMID per line; blank lines are skipped, LF and CRLF both work.

    Raises MalformedLine on the first non-blank line that is not all digits,
    and FileNotReadable if the file cannot be opened or is not UTF-8.
    """
    if format != "plain_lines":
        raise ValueError(f"unsupported PMID file format: {format!r}")
    path = str(path)
    try:
        with open(path, "r", encoding="utf-8-sig", newline="") as fh:
            text = fh.read()
    except UnicodeDecodeError as exc:
        raise FileNotReadable(path, f"not UTF-8 ({exc.reason})") from exc
    except OSError as exc:
        raise FileNotReadable(path, exc.strerror or str(exc)) from exc
    return parse_pmid_lines(text, source_path=path)
