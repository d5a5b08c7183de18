"""Command-line front end.

``medmatch query``      print the PM=... search string(s) for a PMID file
``medmatch match``      fetch record pages and build wosut.txt / search.txt
``medmatch serve-mock`` run the local mock record service

Settings for ``match`` come from flags, then MEDMATCH_* environment
variables, then a JSON config file (``--config`` or MEDMATCH_CONFIG), then
built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, List, Optional, TextIO

from . import __version__
from .errors import (ConfigError, EmptyInput, FetchFailed, HardStop, MalformedMarker,
                     MedmatchError, StoreIOError)
from .fetcher import DEFAULT_USER_AGENT, Fetcher, FetchPolicy
from .ingest import PmidList, parse_pmid_file
from .match_store import (SEARCH, WOSUT, WOSUT_IDX, MatchEntry, MatchStats, MatchTable,
                          archive_page, load_matches, match_stats, write_search_string)
from .page_parser import parse_page
from .query_builder import DEFAULT_CHUNK, build_pmid_query
from .url_template import parse_record_url

log = logging.getLogger("medmatch")

EXIT_OK = 0
EXIT_INCOMPLETE = 1
EXIT_CONFIG = 2
EXIT_HARD_STOP = 3
EXIT_IO = 4

SUMMARY = "summary.jsonl"
ENV_PREFIX = "MEDMATCH_"

DEFAULTS = {
    "rate_ms": 2000,
    "retries": 3,
    "backoff_ms": 1000,
    "timeout": 30.0,
    "user_agent": DEFAULT_USER_AGENT,
    "chunk": DEFAULT_CHUNK,
    "resume": False,
    "compat_r": False,
}

# setting name -> converter applied to env / config-file values
_SETTINGS = {
    "url": str,
    "numdocs": int,
    "out": str,
    "pmid_file": str,
    "rate_ms": float,
    "retries": int,
    "backoff_ms": float,
    "timeout": float,
    "user_agent": str,
    "chunk": int,
    "resume": "bool",
    "compat_r": "bool",
}


@dataclass
class RunConfig:
    sample_url: str
    numdocs: int
    out_dir: Path
    pmid_file: Optional[Path] = None
    policy: FetchPolicy = field(default_factory=FetchPolicy)
    chunk_size: int = DEFAULT_CHUNK
    resume: bool = False
    compat_r: bool = False

    def validate(self):
        if not self.sample_url:
            raise ConfigError("a sample record URL is required (--url)")
        if isinstance(self.numdocs, bool) or not isinstance(self.numdocs, int) or self.numdocs < 1:
            raise ConfigError(f"numdocs must be a positive integer, got {self.numdocs!r}")
        if int(self.chunk_size) < 1:
            raise ConfigError(f"chunk size must be >= 1, got {self.chunk_size!r}")
        if not self.out_dir:
            raise ConfigError("an output directory is required (--out)")


@dataclass
class RunResult:
    stats: MatchStats
    exit_code: int
    elapsed: float
    fetched: int = 0
    skipped: int = 0
    failed: List[int] = field(default_factory=list)
    error: Optional[str] = None
    coverage: Optional[dict] = None

    def summary(self) -> dict:
        s = self.stats
        out = {
            "event": "summary",
            "finished_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "total": s.total,
            "matched": s.matched,
            "rate": s.rate,
            "elapsed_s": round(self.elapsed, 3),
            "fetched": self.fetched,
            "skipped": self.skipped,
            "failed": self.failed,
            "exit_code": self.exit_code,
        }
        if self.error:
            out["error"] = self.error
        if self.coverage is not None:
            out["coverage"] = self.coverage
        return out


def _stderr_progress(stream: TextIO) -> Callable[[int, int], None]:
    def report(k, n):
        print(f"record {k} of {n}", file=stream, flush=True)
    return report


def _open_table(config: RunConfig) -> MatchTable:
    out_dir = Path(config.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out_dir}: {exc}") from exc
    wosut = out_dir / WOSUT
    if config.resume:
        table = load_matches(out_dir, compat_r=config.compat_r)
        if len(table) and table.compat_r != config.compat_r:
            want = "with" if table.compat_r else "without"
            raise ConfigError(f"{wosut} was written {want} --compat-r; resume with the same setting")
        table.compat_r = config.compat_r if not len(table) else table.compat_r
        if table.needs_repair:
            log.warning("repairing %s after an interrupted run", wosut)
            table.rewrite(sort=False)
        return table
    if wosut.exists() and wosut.stat().st_size:
        raise ConfigError(f"{wosut} already has rows; pass --resume to continue that run "
                          "or choose another output directory")
    for name in (WOSUT, WOSUT_IDX):
        try:
            (out_dir / name).unlink()
        except FileNotFoundError:
            pass
    return MatchTable(out_dir, compat_r=config.compat_r)


def run_pipeline(config: RunConfig, stdout: Optional[TextIO] = None, stderr: Optional[TextIO] = None,
                 progress: Optional[Callable[[int, int], None]] = None, quiet: bool = False,
                 session=None) -> RunResult:
    """Fetch documents 1..numdocs, parse, archive and record them, then write search.txt.

    Configuration problems raise ConfigError before any request is sent. Run
    time failures are reported through ``RunResult.exit_code``: 3 after a
    hard stop, 4 after a local I/O error, 1 when some documents could not be
    fetched (rerun with resume to retry them), 0 otherwise.
    """
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    config.validate()
    try:
        template = parse_record_url(config.sample_url)
    except MedmatchError as exc:
        raise ConfigError(f"bad sample URL: {exc}") from exc
    expected: Optional[PmidList] = None
    if config.pmid_file:
        try:
            expected = parse_pmid_file(config.pmid_file)
        except MedmatchError as exc:
            raise ConfigError(str(exc)) from exc
    table = _open_table(config)
    out_dir = table.out_dir

    if progress is None and not quiet:
        progress = _stderr_progress(stderr)
    done = table.doc_indices
    todo = [k for k in range(1, config.numdocs + 1) if k not in done]
    skipped = config.numdocs - len(todo)
    if skipped:
        log.info("resuming: %d of %d documents already recorded", skipped, config.numdocs)

    started = time.monotonic()
    failed: List[int] = []
    fetched = 0
    exit_code = EXIT_OK
    error = None
    try:
        with Fetcher(template, config.policy, session=session) as fetcher:
            for k, result in fetcher.iter_pages(todo, progress, config.numdocs):
                if isinstance(result, FetchFailed):
                    failed.append(k)
                    continue
                fetched += 1
                try:
                    parsed = parse_page(result)
                except MalformedMarker as exc:
                    log.warning("doc %d: %s; page kept for inspection, row not recorded", k, exc)
                    archive_page(result, None, out_dir)
                    failed.append(k)
                    continue
                archive_page(result, parsed, out_dir)
                table.append(MatchEntry.from_parsed(parsed))
    except HardStop as exc:
        exit_code, error = EXIT_HARD_STOP, str(exc)
        print(f"medmatch: stopped: {exc}. Outputs so far are kept; rerun with --resume "
              "once access is restored.", file=stderr)
    except StoreIOError as exc:
        exit_code, error = EXIT_IO, str(exc)
        print(f"medmatch: I/O error: {exc}", file=stderr)

    if exit_code != EXIT_IO:
        try:
            if not table.in_order:
                table.rewrite()
            write_search_string(table, config.chunk_size)
        except StoreIOError as exc:
            exit_code, error = EXIT_IO, str(exc)
            print(f"medmatch: I/O error: {exc}", file=stderr)
    if exit_code == EXIT_OK and failed:
        exit_code = EXIT_INCOMPLETE

    elapsed = time.monotonic() - started
    result = RunResult(match_stats(table), exit_code, elapsed, fetched, skipped, failed, error)
    if expected is not None:
        result.coverage = table.coverage(expected)

    print(f"{result.stats} in {elapsed:.1f}s", file=stdout)
    if failed:
        print(f"{len(failed)} document(s) not recorded: {', '.join(map(str, failed[:20]))}"
              f"{' ...' if len(failed) > 20 else ''}; rerun with --resume to retry", file=stdout)
    if result.coverage is not None:
        cov = result.coverage
        print(f"{cov['found']}/{cov['expected']} listed PMIDs found in the record pages", file=stdout)
    try:
        with open(out_dir / SUMMARY, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(result.summary()) + "\n")
    except OSError as exc:
        log.error("cannot write %s: %s", out_dir / SUMMARY, exc)
        if result.exit_code == EXIT_OK:
            result.exit_code = EXIT_IO
    return result


def emit_pmid_query(pmid_file, chunk_size: int = DEFAULT_CHUNK, stdout: Optional[TextIO] = None) -> List[str]:
    pmids = parse_pmid_file(pmid_file)
    if not pmids:
        raise EmptyInput(f"no PMIDs in {pmid_file}")
    chunks = build_pmid_query(pmids, chunk_size).chunks
    out = stdout or sys.stdout
    for c in chunks:
        print(c, file=out)
    return chunks


# -- argument handling -----------------------------------------------------------

def _convert(name, value, origin):
    kind = _SETTINGS[name]
    try:
        if kind == "bool":
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off", ""):
                return False
            raise ValueError(value)
        if kind is int and isinstance(value, float):
            raise ValueError(value)
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{origin}: invalid value for {name}: {value!r}") from None


def resolve_settings(args: argparse.Namespace, environ=None) -> dict:
    """Merge flag values over MEDMATCH_* variables over the config file over defaults."""
    environ = os.environ if environ is None else environ
    settings = dict(DEFAULTS)
    config_path = getattr(args, "config", None) or environ.get(ENV_PREFIX + "CONFIG")
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
        for key, value in data.items():
            name = key.replace("-", "_")
            if name not in _SETTINGS:
                raise ConfigError(f"{config_path}: unknown setting {key!r}")
            settings[name] = _convert(name, value, config_path)
    for name in _SETTINGS:
        var = ENV_PREFIX + name.upper()
        if var in environ:
            settings[name] = _convert(name, environ[var], var)
    for name in _SETTINGS:
        value = getattr(args, name, None)
        if value is not None:
            settings[name] = value
    return settings


def config_from_settings(settings: dict) -> RunConfig:
    try:
        policy = FetchPolicy(
            min_interval=settings["rate_ms"] / 1000.0,
            max_retries=settings["retries"],
            backoff_base=settings["backoff_ms"] / 1000.0,
            timeout=settings["timeout"],
            user_agent=settings["user_agent"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    numdocs = settings.get("numdocs")
    if numdocs is None:
        raise ConfigError("the number of documents to collect is required (--numdocs)")
    config = RunConfig(
        sample_url=settings.get("url") or "",
        numdocs=numdocs,
        out_dir=Path(settings["out"]) if settings.get("out") else None,
        pmid_file=Path(settings["pmid_file"]) if settings.get("pmid_file") else None,
        policy=policy,
        chunk_size=settings["chunk"],
        resume=settings["resume"],
        compat_r=settings["compat_r"],
    )
    config.validate()
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="medmatch", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    q = sub.add_parser("query", help="print the WoS advanced-search string for a PMID list")
    q.add_argument("--pmid-file", required=True, help="PubMed export, one PMID per line")
    q.add_argument("--chunk", type=int, default=DEFAULT_CHUNK, help="max terms per line (default %(default)s)")

    m = sub.add_parser("match", help="match record pages to UTs and write wosut.txt / search.txt")
    m.add_argument("--url", help="URL of one WoS MEDLINE record page from the result list")
    m.add_argument("--numdocs", type=int, help="number of documents to collect (default: size of --pmid-file)")
    m.add_argument("--out", help="output directory")
    m.add_argument("--pmid-file", help="PMID list; used to check coverage and as the default --numdocs")
    m.add_argument("--rate-ms", type=float, help=f"min gap between requests in ms (default {DEFAULTS['rate_ms']})")
    m.add_argument("--retries", type=int, help=f"retries per document (default {DEFAULTS['retries']})")
    m.add_argument("--backoff-ms", type=float, help=f"first retry delay in ms, doubling (default {DEFAULTS['backoff_ms']})")
    m.add_argument("--timeout", type=float, help=f"request timeout in seconds (default {DEFAULTS['timeout']})")
    m.add_argument("--user-agent", help="User-Agent header")
    m.add_argument("--chunk", type=int, help=f"max UT terms per search.txt line (default {DEFAULTS['chunk']})")
    m.add_argument("--resume", action=argparse.BooleanOptionalAction, default=None,
                   help="skip documents already in wosut.txt")
    m.add_argument("--compat-r", action=argparse.BooleanOptionalAction, default=None,
                   help='write wosut.txt rows as "PMID=...","UT=..." like the original R routine')
    m.add_argument("--mock", action="store_true",
                   help="self-test: serve a local mock corpus and match against it instead of --url")
    m.add_argument("--mock-corpus", help="CSV of pmid,ut rows for --mock (default: synthetic or --pmid-file)")
    m.add_argument("--config", help="JSON file with default settings")
    m.add_argument("-q", "--quiet", action="store_true", help="no per-record progress")

    s = sub.add_parser("serve-mock", help="run the mock WoS record service until interrupted")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--corpus", help="CSV of pmid,ut rows")
    src.add_argument("--records", type=int, default=349, help="synthetic corpus size (default %(default)s)")
    s.add_argument("--matched", type=int, help="synthetic records that get a UT (default: 84%%)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8765)
    return parser


def _default_matched(n: int) -> int:
    return round(n * 294 / 349)


def _mock_corpus(args, settings):
    from .mock_wos import Corpus

    if args.mock_corpus:
        return Corpus.load(args.mock_corpus)
    if settings.get("pmid_file"):
        pmids = parse_pmid_file(settings["pmid_file"])
        return Corpus.from_pmids(pmids, _default_matched(len(pmids)))
    n = settings.get("numdocs")
    if not n or n < 1:
        raise ConfigError("--mock needs --numdocs, --pmid-file or --mock-corpus")
    return Corpus.synthetic(n, _default_matched(n))


def _cmd_match(args) -> int:
    settings = resolve_settings(args)
    server = None
    try:
        if args.mock:
            from .mock_wos import serve_corpus

            if getattr(args, "url", None):
                raise ConfigError("--mock and --url are mutually exclusive")
            corpus = _mock_corpus(args, settings)
            settings.setdefault("numdocs", None)
            if settings["numdocs"] is None:
                settings["numdocs"] = len(corpus)
            server = serve_corpus(corpus)
            settings["url"] = server.sample_url()
            print(f"mock service with {len(corpus)} records at {server.base_url}", file=sys.stderr)
        if settings.get("numdocs") is None and settings.get("pmid_file"):
            settings["numdocs"] = len(parse_pmid_file(settings["pmid_file"]))
        config = config_from_settings(settings)
        result = run_pipeline(config, quiet=args.quiet)
        return result.exit_code
    finally:
        if server is not None:
            server.stop()


def _cmd_serve_mock(args) -> int:
    from .mock_wos import Corpus, MockWosServer

    if args.corpus:
        corpus = Corpus.load(args.corpus)
    else:
        matched = args.matched if args.matched is not None else _default_matched(args.records)
        corpus = Corpus.synthetic(args.records, matched, args.seed)
    server = MockWosServer(corpus, host=args.host, port=args.port)
    print(f"{len(corpus)} records ({corpus.matched} with UT); sample URL:", flush=True)
    print(server.sample_url(), flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "query":
            emit_pmid_query(args.pmid_file, args.chunk)
            return EXIT_OK
        if args.command == "match":
            return _cmd_match(args)
        return _cmd_serve_mock(args)
    except EmptyInput as exc:
        print(f"medmatch: no PMIDs: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, MedmatchError, ValueError) as exc:
        code = EXIT_IO if isinstance(exc, (StoreIOError, OSError)) else EXIT_CONFIG
        print(f"medmatch: {exc}", file=sys.stderr)
        return code
    except KeyboardInterrupt:
        print("medmatch: interrupted; rerun with --resume to continue", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
