"""On-disk match table and the run's output files.

Layout of an output directory::

    wosut.txt       one row per processed document, "<pmid>,<ut>" (ut empty
                    when unmatched), LF line endings, appended as documents
                    complete
    wosut.idx       the document index of each wosut.txt row, line-aligned;
                    this is what resume keys on
    search.txt      UT=... OR UT=... query, one chunk per line
    wos<PMID>.txt   raw page bytes per document (wos_doc<k>.txt without PMID)

With ``compat_r`` the rows are written as quoted, tag-prefixed fields, the
way R's ``write.table`` prints a ``cbind(pmid, wosut)`` row:
``"PMID=20301227","UT=000285952700022"``; an unmatched row is just
``"PMID=20301227"``.
"""

from __future__ import annotations

import logging
import os
import re
import tempfile
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, List, Optional

from .errors import CorruptTableLine, DuplicateDocIndex, InvalidPmid, InvalidUt, StoreIOError
from .ingest import Pmid
from .page_parser import ParsedRecord, WosUt
from .query_builder import DEFAULT_CHUNK, build_ut_query

log = logging.getLogger(__name__)

WOSUT = "wosut.txt"
WOSUT_IDX = "wosut.idx"
SEARCH = "search.txt"

_CANONICAL_ROW = re.compile(r'([0-9]*),([^\s,"&]*)')
_COMPAT_ROW = re.compile(r'"PMID=([0-9]+)"(?:,"UT=([^\s,"&]+)")?|"UT=([^\s,"&]+)"')


@dataclass(frozen=True)
class MatchEntry:
    doc_index: int
    pmid: Optional[Pmid] = None
    ut: Optional[WosUt] = None

    @classmethod
    def from_parsed(cls, rec: ParsedRecord) -> "MatchEntry":
        return cls(rec.doc_index, rec.pmid, rec.ut)

    def render(self, compat_r: bool = False) -> str:
        if compat_r:
            fields = []
            if self.pmid is not None:
                fields.append(f'"PMID={self.pmid}"')
            if self.ut is not None:
                fields.append(f'"UT={self.ut}"')
            return ",".join(fields)
        return f"{'' if self.pmid is None else self.pmid},{self.ut or ''}"


@dataclass(frozen=True)
class MatchStats:
    total: int
    matched: int

    @property
    def rate(self) -> float:
        return self.matched / self.total if self.total else 0.0

    @property
    def exact_rate(self) -> Fraction:
        return Fraction(self.matched, self.total) if self.total else Fraction(0)

    def __str__(self):
        return f"{self.matched}/{self.total} matched ({100 * self.rate:.2f}%)"


def parse_row(line: str, line_number: int = 0, doc_index: int = 0):
    """Parse one wosut.txt row. Returns ``(entry, is_compat)``; is_compat is None for an empty row."""
    try:
        return _parse_row(line, line_number, doc_index)
    except (InvalidPmid, InvalidUt):
        raise CorruptTableLine(line_number, line) from None


def _parse_row(line, line_number, doc_index):
    if line == "":
        return MatchEntry(doc_index), None
    m = _CANONICAL_ROW.fullmatch(line)
    if m:
        pmid_s, ut_s = m.groups()
        if pmid_s and int(pmid_s) < 1:
            raise CorruptTableLine(line_number, line)
        return MatchEntry(doc_index, Pmid(int(pmid_s)) if pmid_s else None,
                          WosUt(ut_s) if ut_s else None), False
    m = _COMPAT_ROW.fullmatch(line)
    if m:
        pmid_s, ut_s, ut_only = m.groups()
        if pmid_s and int(pmid_s) < 1:
            raise CorruptTableLine(line_number, line)
        ut_s = ut_s or ut_only
        return MatchEntry(doc_index, Pmid(int(pmid_s)) if pmid_s else None,
                          WosUt(ut_s) if ut_s else None), True
    raise CorruptTableLine(line_number, line)


def _complete_lines(path: Path):
    """Return (lines, torn) where ``torn`` is True when the file ends mid-line."""
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        return [], False
    except OSError as exc:
        raise StoreIOError(f"cannot read {path}: {exc}") from exc
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptTableLine(data[:exc.start].count(b"\n") + 1, "<not UTF-8>", path=path) from exc
    parts = text.split("\n")
    torn = parts[-1] != ""
    return parts[:-1], torn


class MatchTable:
    """Ordered PMID/UT rows for one output directory, persisted as they arrive."""

    def __init__(self, out_dir, entries: Iterable[MatchEntry] = (), compat_r: bool = False):
        self.out_dir = Path(out_dir)
        self.compat_r = compat_r
        self.entries: List[MatchEntry] = []
        self._docs = {}
        self._pmids = {}
        self.needs_repair = False
        for e in entries:
            self._add(e)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def wosut_path(self) -> Path:
        return self.out_dir / WOSUT

    @property
    def idx_path(self) -> Path:
        return self.out_dir / WOSUT_IDX

    @property
    def doc_indices(self) -> set:
        return set(self._docs)

    @property
    def in_order(self) -> bool:
        return all(a.doc_index < b.doc_index for a, b in zip(self.entries, self.entries[1:]))

    def _add(self, entry: MatchEntry):
        if entry.doc_index in self._docs:
            raise DuplicateDocIndex(entry.doc_index)
        if entry.pmid is not None:
            if entry.pmid in self._pmids:
                log.warning("PMID %s appears at doc %d and doc %d; keeping both rows",
                            entry.pmid, self._pmids[entry.pmid], entry.doc_index)
            else:
                self._pmids[entry.pmid] = entry.doc_index
        self._docs[entry.doc_index] = entry
        self.entries.append(entry)

    def append(self, entry: MatchEntry) -> "MatchTable":
        """Record ``entry`` and write its row to disk before returning."""
        if entry.doc_index in self._docs:
            raise DuplicateDocIndex(entry.doc_index)
        row = entry.render(self.compat_r) + "\n"
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            # row first, then its index: a crash in between leaves an
            # unindexed row that the next load discards
            with open(self.wosut_path, "a", encoding="utf-8", newline="") as fh:
                fh.write(row)
                fh.flush()
            with open(self.idx_path, "a", encoding="utf-8", newline="") as fh:
                fh.write(f"{entry.doc_index}\n")
                fh.flush()
        except OSError as exc:
            raise StoreIOError(f"cannot append to {self.wosut_path}: {exc}") from exc
        self._add(entry)
        return self

    def rewrite(self, sort: bool = True):
        """Atomically rewrite wosut.txt and wosut.idx from memory (optionally in doc order)."""
        if sort:
            self.entries.sort(key=lambda e: e.doc_index)
        rows = "".join(e.render(self.compat_r) + "\n" for e in self.entries)
        idx = "".join(f"{e.doc_index}\n" for e in self.entries)
        try:
            _atomic_write(self.wosut_path, rows.encode("utf-8"))
            _atomic_write(self.idx_path, idx.encode("utf-8"))
        except OSError as exc:
            raise StoreIOError(f"cannot rewrite {self.wosut_path}: {exc}") from exc
        self.needs_repair = False

    def matched(self) -> List[MatchEntry]:
        return [e for e in self.entries if e.ut is not None]

    def coverage(self, pmids: Iterable) -> dict:
        """Compare the table's PMIDs with an expected list."""
        expected = [int(p) for p in pmids]
        seen = {int(e.pmid) for e in self.entries if e.pmid is not None}
        want = set(expected)
        return {
            "expected": len(expected),
            "found": sum(1 for p in expected if p in seen),
            "missing": [p for p in expected if p not in seen],
            "unexpected": sorted(seen - want),
        }


def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def append_match(table: MatchTable, entry: MatchEntry) -> MatchTable:
    return table.append(entry)


def load_matches(out_dir, compat_r: Optional[bool] = None) -> MatchTable:
    """Rebuild the table from ``out_dir/wosut.txt`` (empty table if absent).

    Without a wosut.idx the rows are taken to be documents 1..n. A torn last
    row or rows with no index line (a run killed mid-append) are dropped and
    the table is flagged ``needs_repair``. ``compat_r`` is taken from the
    file when it has rows, otherwise from the argument.
    """
    out_dir = Path(out_dir)
    rows, torn = _complete_lines(out_dir / WOSUT)
    idx_lines, idx_torn = _complete_lines(out_dir / WOSUT_IDX)
    have_idx = (out_dir / WOSUT_IDX).exists()
    needs_repair = torn or idx_torn

    if have_idx:
        indices = []
        for n, raw in enumerate(idx_lines, start=1):
            if not raw.isdigit() or int(raw) < 1:
                raise CorruptTableLine(n, raw, path=out_dir / WOSUT_IDX)
            indices.append(int(raw))
        if len(indices) > len(rows):
            raise CorruptTableLine(len(rows) + 1, "", path=out_dir / WOSUT)
        if len(indices) < len(rows):
            log.warning("%d row(s) at the end of %s have no index; they will be re-fetched",
                        len(rows) - len(indices), WOSUT)
            needs_repair = True
            rows = rows[:len(indices)]
    else:
        indices = list(range(1, len(rows) + 1))
        needs_repair = needs_repair or bool(rows)

    entries = []
    detected = None
    for n, (line, k) in enumerate(zip(rows, indices), start=1):
        entry, is_compat = parse_row(line, n, k)
        if is_compat is not None:
            if detected is None:
                detected = is_compat
            elif detected != is_compat:
                raise CorruptTableLine(n, line, path=out_dir / WOSUT)
        entries.append(entry)
    try:
        table = MatchTable(out_dir, entries, compat_r=detected if detected is not None else bool(compat_r))
    except DuplicateDocIndex as exc:
        raise CorruptTableLine(indices.index(exc.doc_index) + 1, str(exc.doc_index),
                               path=out_dir / WOSUT_IDX) from exc
    table.needs_repair = needs_repair
    if torn:
        log.warning("%s ends with a partial row; it will be discarded", WOSUT)
    return table


def archive_page(page, parsed: Optional[ParsedRecord], out_dir) -> Path:
    """Write the raw page bytes to ``wos<PMID>.txt`` (``wos_doc<k>.txt`` without a PMID)."""
    pmid = parsed.pmid if parsed is not None else None
    name = f"wos{pmid}.txt" if pmid is not None else f"wos_doc{page.doc_index}.txt"
    path = Path(out_dir) / name
    try:
        path.write_bytes(page.content)
    except OSError as exc:
        raise StoreIOError(f"cannot write {path}: {exc}") from exc
    return path


def write_search_string(table: MatchTable, max_terms_per_chunk: int = DEFAULT_CHUNK,
                        path=None) -> Path:
    path = Path(path) if path is not None else table.out_dir / SEARCH
    uts = [e.ut for e in sorted(table.entries, key=lambda e: e.doc_index) if e.ut is not None]
    if uts:
        text = "\n".join(build_ut_query(uts, max_terms_per_chunk).chunks) + "\n"
    else:
        log.warning("no document was matched to a UT; %s is empty", path.name)
        text = ""
    try:
        _atomic_write(path, text.encode("utf-8"))
    except OSError as exc:
        raise StoreIOError(f"cannot write {path}: {exc}") from exc
    return path


def match_stats(table: Iterable[MatchEntry]) -> MatchStats:
    entries = list(table)
    return MatchStats(len(entries), sum(1 for e in entries if e.ut is not None))
