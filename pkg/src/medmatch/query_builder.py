"""Render WoS advanced-search strings (``PM=...`` / ``UT=...`` joined by OR)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional

from .errors import EmptyInput

CONNECTOR = " OR "
DEFAULT_CHUNK = 50


@dataclass(frozen=True)
class SearchString:
    field_tag: str
    values: tuple
    max_terms_per_chunk: int = DEFAULT_CHUNK

    @property
    def clauses(self) -> List[str]:
        return [f"{self.field_tag}={v}" for v in self.values]

    @property
    def chunks(self) -> List[str]:
        clauses = self.clauses
        n = self.max_terms_per_chunk
        return [CONNECTOR.join(clauses[i:i + n]) for i in range(0, len(clauses), n)]

    def __str__(self):
        return "\n".join(self.chunks)


def _build(tag: str, values: list, max_terms_per_chunk: int) -> SearchString:
    if int(max_terms_per_chunk) < 1:
        raise ValueError(f"max_terms_per_chunk must be >= 1, got {max_terms_per_chunk}")
    if not values:
        raise EmptyInput(f"no {tag} terms to build a query from")
    return SearchString(tag, tuple(values), int(max_terms_per_chunk))


def build_pmid_query(pmids: Iterable, max_terms_per_chunk: int = DEFAULT_CHUNK) -> SearchString:
    """``PM=<a> OR PM=<b> ...`` in input order, split greedily into chunks."""
    return _build("PM", [str(int(p)) for p in pmids], max_terms_per_chunk)


def build_ut_query(uts: Iterable[Optional[str]], max_terms_per_chunk: int = DEFAULT_CHUNK) -> SearchString:
    # unmatched entries (None / "") never become terms
    return _build("UT", [str(u) for u in uts if u], max_terms_per_chunk)
