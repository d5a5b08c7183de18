import math

import pytest
from hypothesis import given, strategies as st

from medmatch.errors import EmptyInput
from medmatch.ingest import parse_pmid_lines
from medmatch.query_builder import build_pmid_query, build_ut_query


def test_two_pmids_single_chunk():
    q = build_pmid_query(parse_pmid_lines("20301227\n20301228\n"), 50)
    assert q.field_tag == "PM"
    assert q.chunks == ["PM=20301227 OR PM=20301228"]


def test_single_pmid_has_no_connector():
    assert build_pmid_query([42], 50).chunks == ["PM=42"]


def test_greedy_split():
    assert build_pmid_query([1, 2, 3], 2).chunks == ["PM=1 OR PM=2", "PM=3"]


def test_empty_pmids():
    with pytest.raises(EmptyInput):
        build_pmid_query([], 50)


def test_bad_chunk_size():
    with pytest.raises(ValueError):
        build_pmid_query([1], 0)


def test_ut_query():
    q = build_ut_query(["000285952700022", "000285952700023"], 50)
    assert q.chunks == ["UT=000285952700022 OR UT=000285952700023"]
    assert build_ut_query(["A"]).chunks == ["UT=A"]


def test_ut_query_skips_unmatched():
    assert build_ut_query(["A", None, "", "B"]).chunks == ["UT=A OR UT=B"]


@pytest.mark.parametrize("uts", [[], [None, ""]])
def test_ut_query_empty(uts):
    with pytest.raises(EmptyInput):
        build_ut_query(uts)


@given(st.lists(st.integers(1, 10**9), min_size=1, max_size=200), st.integers(1, 60))
def test_chunks_reassemble_input(values, size):
    q = build_pmid_query(values, size)
    chunks = q.chunks
    assert len(chunks) == math.ceil(len(values) / size)
    terms = [t for c in chunks for t in c.split(" OR ")]
    assert terms == [f"PM={v}" for v in values]
    for c in chunks:
        n = c.count("PM=")
        assert n <= size
        assert c.count(" OR ") == n - 1
    assert str(q) == "\n".join(chunks)
