"""A stand-in for the WoS MEDLINE record pages, served from a local corpus.

Document ``k`` of the corpus is served for any GET whose ``doc`` query
parameter equals ``k``; every other parameter is ignored. Faults can be
planned per document, and every request is logged with a monotonic
timestamp so tests can check the client's pacing.
"""

from __future__ import annotations

import csv
import logging
import random
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union
from urllib.parse import parse_qs, urlsplit

from .errors import BindFailure
from .ingest import Pmid
from .page_parser import PMID_MARKER, UT_MARKER, WosUt

log = logging.getLogger(__name__)


# -- corpus ------------------------------------------------------------------

@dataclass(frozen=True)
class Corpus:
    records: Tuple[Tuple[Pmid, Optional[WosUt]], ...]

    def __post_init__(self):
        recs = tuple((Pmid(p), WosUt(u) if u else None) for p, u in self.records)
        object.__setattr__(self, "records", recs)
        seen = set()
        for p, _ in recs:
            if p in seen:
                raise ValueError(f"PMID {p} appears twice in the corpus")
            seen.add(p)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, k):
        return self.records[k]

    @property
    def matched(self) -> int:
        return sum(1 for _, u in self.records if u is not None)

    @classmethod
    def from_pmids(cls, pmids: Sequence, matched: Optional[int] = None, seed: int = 0) -> "Corpus":
        """Give ``matched`` of the PMIDs (all, by default) a random UT."""
        pmids = [Pmid(p) for p in pmids]
        rng = random.Random(seed)
        n_matched = len(pmids) if matched is None else matched
        if not 0 <= n_matched <= len(pmids):
            raise ValueError("matched must lie between 0 and the number of records")
        hits = set(rng.sample(range(len(pmids)), n_matched))
        uts = set()
        records = []
        for i, p in enumerate(pmids):
            ut = None
            if i in hits:
                while ut is None or ut in uts:
                    ut = f"000{rng.randrange(10 ** 12):012d}"
                uts.add(ut)
            records.append((p, ut))
        return cls(tuple(records))

    @classmethod
    def synthetic(cls, n: int, matched: Optional[int] = None, seed: int = 0) -> "Corpus":
        rng = random.Random(seed)
        pmids = rng.sample(range(10_000_000, 40_000_000), n)
        return cls.from_pmids(pmids, matched, seed)

    @classmethod
    def load(cls, path) -> "Corpus":
        """Read ``pmid,ut`` rows (ut may be empty), the same layout as wosut.txt."""
        records = []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if not row or not row[0].strip():
                    continue
                records.append((row[0].strip(), row[1].strip() if len(row) > 1 else ""))
        return cls(tuple(records))

    def save(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for p, u in self.records:
                fh.write(f"{p},{u or ''}\n")


# -- fault plan ----------------------------------------------------------------

@dataclass(frozen=True)
class Ok:
    pass


@dataclass(frozen=True)
class FailNTimes:
    n: int
    status: int = 500


@dataclass(frozen=True)
class AlwaysStatus:
    status: int


@dataclass(frozen=True)
class Delay:
    seconds: float
    times: Optional[int] = None  # None: every request


Fault = Union[Ok, FailNTimes, AlwaysStatus, Delay]
FaultPlan = Dict[int, Fault]


# -- page generator ------------------------------------------------------------

_FILLER = [
    '<!DOCTYPE html PUBLIC "-//W3C//DTD XHTML 1.0 Transitional//EN">',
    '<html xmlns="http://www.w3.org/1999/xhtml">',
    "<head>",
    '<meta http-equiv="Content-Type" content="text/html; charset=utf-8" />',
    "<title>Web of Science [v.5.13] - MEDLINE Full Record</title>",
    '<link rel="stylesheet" type="text/css" href="/styles/wok5.css" />',
    "</head>",
    '<body class="fullRecord">',
    '<div class="block-record-info">',
    '<span class="FR_label">Source:</span> <value>HEART RHYTHM</value>',
    '<span class="FR_label">Volume:</span> <value>7</value>',
    '<span class="FR_label">Published:</span> <value>2010</value>',
    '<span class="FR_label">MeSH Heading:</span> <value>Brugada Syndrome</value>',
    '<span class="FR_label">Document Type:</span> <value>Journal Article</value>',
    '<p class="FR_field">Language: English</p>',
    '<a class="snowplow-full-record" href="/OutboundService.do?action=go&amp;product=MEDLINE">',
    "</div>",
    '<div id="footer">&copy; 2014 Thomson Reuters</div>',
    '<script type="text/javascript">var sid = "MOCK"; var product = "MEDLINE";</script>',
]


def generate_fixture_page(pmid, ut=None, newline: str = "\n", noise: int = 0,
                          rng: Optional[random.Random] = None) -> str:
    """A multi-line record page carrying one PMID marker line and, if ``ut``, one UT marker line.

    ``noise`` adds that many extra filler lines at random positions. Filler
    never contains either marker.
    """
    pmid = Pmid(pmid)
    lines = list(_FILLER)
    rng = rng or random.Random(int(pmid))
    for _ in range(noise):
        lines.insert(rng.randrange(9, len(lines) - 2), rng.choice(_FILLER[9:16]))
    pmid_line = (
        '<a class="snowplow-medline-link" href="http://www.ncbi.nlm.nih.gov/entrez/query.fcgi?'
        f'cmd=Retrieve&db=PubMed&term={PMID_MARKER}={pmid}&doptcmdl=Abstract" target="_blank">PubMed</a>'
    )
    lines.insert(10, pmid_line)
    if ut:
        ut = WosUt(ut)
        ut_line = (
            '<a href="http://gateway.webofknowledge.com/gateway/Gateway.cgi?GWVersion=2&SrcAuth=Alerting'
            f'&SrcApp=Alerting&DestApp=WOS&DestLinkType=FullRecord&{UT_MARKER}{ut}&SrcAppSID=MOCK">'
            "View full record in Web of Science</a>"
        )
        lines.insert(12, ut_line)
    return newline.join(lines) + newline


# -- server --------------------------------------------------------------------

@dataclass(frozen=True)
class LoggedRequest:
    t: float
    path: str
    doc: Optional[int]
    status: int


class _Handler(BaseHTTPRequestHandler):
    server_version = "MockWoS/1.0"

    def log_message(self, fmt, *args):
        log.debug("mock: " + fmt, *args)

    def do_GET(self):
        t = time.monotonic()
        mock = self.server.mock
        doc = None
        raw = parse_qs(urlsplit(self.path).query).get("doc")
        if raw and raw[0].isdigit():
            doc = int(raw[0])
        status, body = mock._respond(doc)
        mock._log(LoggedRequest(t, self.path, doc, status))
        try:
            self.send_response(status)
            self.send_header("Content-Type", "text/html; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
        except (BrokenPipeError, ConnectionResetError):
            # client gave up (e.g. its timeout fired during a Delay fault)
            pass


class MockWosServer:
    """Single-threaded HTTP server; handles one request at a time."""

    def __init__(self, corpus: Corpus, faults: Optional[FaultPlan] = None,
                 host: str = "127.0.0.1", port: int = 0, newline: str = "\n", noise: int = 3):
        self.corpus = corpus
        self.faults = dict(faults or {})
        for k in self.faults:
            if not 1 <= k <= len(corpus):
                raise ValueError(f"fault planned for doc {k}, outside 1..{len(corpus)}")
        self.newline = newline
        self.noise = noise
        self._hits: Dict[int, int] = {}
        self._log_lock = threading.Lock()
        self._request_log: List[LoggedRequest] = []
        try:
            self._httpd = HTTPServer((host, port), _Handler)
        except OSError as exc:
            raise BindFailure(f"cannot bind mock server to {host}:{port}: {exc}") from exc
        self._httpd.mock = self
        self._thread: Optional[threading.Thread] = None

    @property
    def host(self) -> str:
        return self._httpd.server_address[0]

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def sample_url(self, doc: int = 1, search_mode: str = "AdvancedSearch") -> str:
        return (f"{self.base_url}/full_record.do?product=MEDLINE&search_mode={search_mode}"
                f"&qid=1&SID=MOCKSESSION&page=1&doc={doc}")

    def page(self, doc: int) -> str:
        pmid, ut = self.corpus[doc - 1]
        newline = self.newline
        if newline == "mixed":
            newline = "\r\n" if doc % 2 else "\n"
        return generate_fixture_page(pmid, ut, newline=newline, noise=self.noise)

    def _respond(self, doc: Optional[int]):
        if doc is None or not 1 <= doc <= len(self.corpus):
            return 404, b"no such document"
        with self._log_lock:
            self._hits[doc] = hit = self._hits.get(doc, 0) + 1
        fault = self.faults.get(doc)
        if isinstance(fault, FailNTimes) and hit <= fault.n:
            return fault.status, f"planned failure {hit}/{fault.n}".encode()
        if isinstance(fault, AlwaysStatus):
            return fault.status, b"planned failure"
        if isinstance(fault, Delay) and (fault.times is None or hit <= fault.times):
            time.sleep(fault.seconds)
        return 200, self.page(doc).encode("utf-8")

    def _log(self, entry: LoggedRequest):
        with self._log_lock:
            self._request_log.append(entry)

    @property
    def request_log(self) -> List[LoggedRequest]:
        with self._log_lock:
            return list(self._request_log)

    def gaps(self) -> List[float]:
        """Seconds between consecutive request arrivals."""
        times = [r.t for r in self.request_log]
        return [b - a for a, b in zip(times, times[1:])]

    def start(self) -> "MockWosServer":
        if self._thread is None:
            self._thread = threading.Thread(target=self._httpd.serve_forever, kwargs={"poll_interval": 0.05},
                                            name="mock-wos", daemon=True)
            self._thread.start()
        return self

    def serve_forever(self):
        """Serve in the calling thread until interrupted, then release the socket."""
        try:
            self._httpd.serve_forever(poll_interval=0.2)
        finally:
            self._httpd.server_close()

    def stop(self):
        if self._thread is not None:
            self._httpd.shutdown()
            self._thread.join()
            self._thread = None
        self._httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve_corpus(corpus: Corpus, faults: Optional[FaultPlan] = None, port: int = 0,
                 host: str = "127.0.0.1", **kwargs) -> MockWosServer:
    """Start a mock service in a background thread; the returned handle stops it."""
    return MockWosServer(corpus, faults, host=host, port=port, **kwargs).start()
