import io
import json
from pathlib import Path

import pytest

from medmatch import cli
from medmatch.cli import RunConfig, emit_pmid_query, main, resolve_settings, run_pipeline
from medmatch.errors import ConfigError, EmptyInput
from medmatch.fetcher import FetchPolicy
from medmatch.mock_wos import AlwaysStatus, Corpus

FAST = FetchPolicy(min_interval=0, max_retries=1, backoff_base=0, timeout=5)


def config(server, out, numdocs=None, **kw):
    return RunConfig(server.sample_url(), numdocs or len(server.corpus), Path(out), policy=FAST, **kw)


def run(cfg, **kw):
    out, err = io.StringIO(), io.StringIO()
    result = run_pipeline(cfg, stdout=out, stderr=err, **kw)
    return result, out.getvalue(), err.getvalue()


def test_full_run(mock_wos, tmp_path):
    corpus = Corpus.synthetic(12, 9, seed=4)
    server = mock_wos(corpus)
    result, out, err = run(config(server, tmp_path))
    assert result.exit_code == 0
    assert (result.stats.total, result.stats.matched) == (12, 9)
    rows = (tmp_path / "wosut.txt").read_text().splitlines()
    assert rows == [f"{p},{u or ''}" for p, u in corpus.records]
    assert (tmp_path / "search.txt").read_text().count("UT=") == 9
    assert "record 1 of 12" in err and "record 12 of 12" in err
    assert out.startswith("9/12 matched (75.00%)")
    for p, _ in corpus.records:
        assert (tmp_path / f"wos{p}.txt").exists()


def test_summary_jsonl_agrees_with_human_output(mock_wos, tmp_path):
    server = mock_wos(Corpus.synthetic(7, 5, seed=2))
    result, out, _ = run(config(server, tmp_path))
    summary = json.loads((tmp_path / "summary.jsonl").read_text().splitlines()[-1])
    assert (summary["total"], summary["matched"]) == (7, 5)
    assert summary["rate"] == result.stats.rate
    assert out.startswith(f"{summary['matched']}/{summary['total']} matched")
    assert summary["exit_code"] == 0 and summary["failed"] == []


def test_numdocs_zero_rejected_before_network(mock_wos, tmp_path):
    server = mock_wos(3)
    with pytest.raises(ConfigError):
        run(RunConfig(server.sample_url(), 0, tmp_path, policy=FAST))
    assert server.request_log == []


def test_bad_url_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        run(RunConfig("http://h/p?product=MEDLINE", 3, tmp_path, policy=FAST))


def test_existing_output_needs_resume(mock_wos, tmp_path):
    server = mock_wos(3)
    run(config(server, tmp_path))
    with pytest.raises(ConfigError):
        run(config(server, tmp_path))


def test_resume_after_interruption(mock_wos, tmp_path):
    corpus = Corpus.synthetic(20, 15, seed=9)
    server = mock_wos(corpus)
    ref = tmp_path / "ref"
    run(config(server, ref))

    part = tmp_path / "part"

    def stop_at_8(k, n):
        if k == 8:
            raise KeyboardInterrupt

    with pytest.raises(KeyboardInterrupt):
        run(config(server, part), progress=stop_at_8)
    assert len((part / "wosut.txt").read_text().splitlines()) == 7
    n_before = len(server.request_log)
    result, _, _ = run(config(server, part, resume=True))
    assert result.skipped == 7 and result.fetched == 13
    assert len(server.request_log) - n_before == 13
    for name in ("wosut.txt", "search.txt"):
        assert (part / name).read_bytes() == (ref / name).read_bytes()


def test_resume_compat_mismatch(mock_wos, tmp_path):
    server = mock_wos(3)
    run(config(server, tmp_path, numdocs=2, compat_r=True))
    with pytest.raises(ConfigError):
        run(config(server, tmp_path, resume=True))


def test_failed_document_then_resume_restores_order(mock_wos, tmp_path):
    corpus = Corpus.synthetic(5, 5, seed=1)
    flaky = mock_wos(corpus, {3: AlwaysStatus(500)})
    result, out, _ = run(config(flaky, tmp_path))
    assert result.exit_code == cli.EXIT_INCOMPLETE and result.failed == [3]
    assert "not recorded: 3" in out
    assert len((tmp_path / "wosut.txt").read_text().splitlines()) == 4

    healthy = mock_wos(corpus)
    result, _, _ = run(config(healthy, tmp_path, resume=True))
    assert result.exit_code == 0 and result.fetched == 1
    assert (tmp_path / "wosut.txt").read_text().splitlines() == [f"{p},{u}" for p, u in corpus.records]


def test_hard_stop_exit_code(mock_wos, tmp_path):
    server = mock_wos(5, {3: AlwaysStatus(403)})
    result, _, err = run(config(server, tmp_path))
    assert result.exit_code == cli.EXIT_HARD_STOP
    assert "--resume" in err
    assert len((tmp_path / "wosut.txt").read_text().splitlines()) == 2
    assert [r.doc for r in server.request_log] == [1, 2, 3]


def test_malformed_page_recorded_as_failure(mock_wos, tmp_path, monkeypatch):
    server = mock_wos(Corpus(((1, "A"), (2, "B"))))
    original = server.page
    monkeypatch.setattr(server, "page", lambda d: original(d).replace("UT=WOS:B", "UT=WOS:") if d == 2 else original(d))
    result, _, _ = run(config(server, tmp_path))
    assert result.failed == [2]
    assert (tmp_path / "wos_doc2.txt").exists()


def test_coverage_against_pmid_file(mock_wos, tmp_path):
    corpus = Corpus(((11, "A"), (22, None)))
    server = mock_wos(corpus)
    pmids = tmp_path / "pmids.txt"
    pmids.write_text("11\n22\n33\n")
    result, out, _ = run(config(server, tmp_path / "o", pmid_file=pmids))
    assert result.coverage["found"] == 2 and result.coverage["missing"] == [33]
    assert "2/3 listed PMIDs" in out


def test_349_record_summary_line(mock_wos, tmp_path):
    server = mock_wos(Corpus.synthetic(349, 294, seed=5))
    result, out, _ = run(config(server, tmp_path), quiet=True)
    assert out.startswith("294/349 matched (84.2")


# -- query subcommand ------------------------------------------------------------

def test_emit_query_two(tmp_path):
    f = tmp_path / "p.txt"
    f.write_text("20301227\n20301228\n")
    buf = io.StringIO()
    assert emit_pmid_query(f, 50, stdout=buf) == ["PM=20301227 OR PM=20301228"]
    assert buf.getvalue() == "PM=20301227 OR PM=20301228\n"


def test_emit_query_120(tmp_path):
    f = tmp_path / "p.txt"
    f.write_text("".join(f"{i}\n" for i in range(1, 121)))
    assert len(emit_pmid_query(f, 50, stdout=io.StringIO())) == 3


def test_emit_query_empty(tmp_path, capsys):
    f = tmp_path / "p.txt"
    f.write_text("")
    with pytest.raises(EmptyInput):
        emit_pmid_query(f, 50, stdout=io.StringIO())
    assert main(["query", "--pmid-file", str(f)]) == cli.EXIT_CONFIG
    assert "no PMIDs" in capsys.readouterr().err


def test_main_query(tmp_path, capsys):
    f = tmp_path / "p.txt"
    f.write_text("1\n2\n3\n")
    assert main(["query", "--pmid-file", str(f), "--chunk", "2"]) == 0
    assert capsys.readouterr().out == "PM=1 OR PM=2\nPM=3\n"


# -- match subcommand ------------------------------------------------------------

def test_main_match(mock_wos, tmp_path, capsys):
    server = mock_wos(Corpus.synthetic(4, 3, seed=0))
    code = main(["match", "--url", server.sample_url(), "--numdocs", "4", "--out", str(tmp_path),
                 "--rate-ms", "0", "--retries", "0", "-q"])
    assert code == 0
    assert capsys.readouterr().out.startswith("3/4 matched")


def test_main_numdocs_zero(tmp_path, capsys):
    code = main(["match", "--url", "http://127.0.0.1:9/x?doc=1", "--numdocs", "0", "--out", str(tmp_path)])
    assert code == cli.EXIT_CONFIG
    assert "numdocs" in capsys.readouterr().err


def test_main_missing_numdocs(tmp_path):
    assert main(["match", "--url", "http://127.0.0.1:9/x?doc=1", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_main_hard_stop(mock_wos, tmp_path):
    server = mock_wos(3, {1: AlwaysStatus(403)})
    code = main(["match", "--url", server.sample_url(), "--numdocs", "3", "--out", str(tmp_path),
                 "--rate-ms", "0", "-q"])
    assert code == cli.EXIT_HARD_STOP


def test_uncreatable_out_dir_is_config_error(mock_wos, tmp_path):
    server = mock_wos(3)
    blocker = tmp_path / "blocked"
    blocker.write_text("")
    code = main(["match", "--url", server.sample_url(), "--numdocs", "3", "--out", str(blocker / "sub"),
                 "--rate-ms", "0", "-q"])
    assert code == cli.EXIT_CONFIG


def test_archive_failure_is_io_exit(mock_wos, tmp_path):
    corpus = Corpus(((11, "A"), (22, "B")))
    server = mock_wos(corpus)
    (tmp_path / "wos22.txt").mkdir()
    code = main(["match", "--url", server.sample_url(), "--numdocs", "2", "--out", str(tmp_path),
                 "--rate-ms", "0", "-q"])
    assert code == cli.EXIT_IO
    assert (tmp_path / "wosut.txt").read_text() == "11,A\n"


def test_main_mock_self_test(tmp_path, capsys):
    code = main(["match", "--mock", "--numdocs", "10", "--out", str(tmp_path), "--rate-ms", "0", "-q"])
    assert code == 0
    assert capsys.readouterr().out.startswith("8/10 matched")


def test_main_mock_from_corpus_file(tmp_path, capsys):
    c = tmp_path / "corpus.csv"
    Corpus(((5, "X"), (6, None), (7, "Y"))).save(c)
    code = main(["match", "--mock", "--mock-corpus", str(c), "--out", str(tmp_path / "o"), "--rate-ms", "0", "-q"])
    assert code == 0
    assert (tmp_path / "o" / "wosut.txt").read_text() == "5,X\n6,\n7,Y\n"


def test_mock_and_url_are_exclusive(tmp_path):
    assert main(["match", "--mock", "--url", "http://h/x?doc=1", "--numdocs", "2",
                 "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_compat_flag(mock_wos, tmp_path):
    server = mock_wos(Corpus(((11, "A"), (22, None))))
    main(["match", "--url", server.sample_url(), "--numdocs", "2", "--out", str(tmp_path),
          "--rate-ms", "0", "--compat-r", "-q"])
    assert (tmp_path / "wosut.txt").read_text() == '"PMID=11","UT=A"\n"PMID=22"\n'


# -- settings precedence -------------------------------------------------------------

def parse(argv):
    return cli.build_parser().parse_args(["match"] + argv)


def test_defaults():
    s = resolve_settings(parse([]), environ={})
    assert (s["rate_ms"], s["retries"], s["backoff_ms"], s["timeout"], s["chunk"]) == (2000, 3, 1000, 30.0, 50)
    assert s["resume"] is False and s["compat_r"] is False


def test_flags_over_env_over_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"rate_ms": 100, "retries": 7, "chunk": 10, "compat-r": True}))
    env = {"MEDMATCH_RATE_MS": "200", "MEDMATCH_RETRIES": "5", "MEDMATCH_RESUME": "yes"}
    s = resolve_settings(parse(["--config", str(cfg), "--rate-ms", "300"]), environ=env)
    assert s["rate_ms"] == 300
    assert s["retries"] == 5
    assert s["chunk"] == 10
    assert s["resume"] is True and s["compat_r"] is True
    s = resolve_settings(parse(["--no-resume"]), environ=env)
    assert s["resume"] is False


def test_config_from_env_var(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"url": "http://h/x?doc=1", "numdocs": 3}))
    s = resolve_settings(parse([]), environ={"MEDMATCH_CONFIG": str(cfg)})
    assert s["url"] == "http://h/x?doc=1" and s["numdocs"] == 3


@pytest.mark.parametrize("content", ['{"bogus": 1}', "[1]", "{not json", '{"retries": "many"}'])
def test_bad_config_file(tmp_path, content):
    cfg = tmp_path / "c.json"
    cfg.write_text(content)
    with pytest.raises(ConfigError):
        resolve_settings(parse(["--config", str(cfg)]), environ={})


def test_bad_env_value():
    with pytest.raises(ConfigError):
        resolve_settings(parse([]), environ={"MEDMATCH_NUMDOCS": "ten"})


def test_serve_mock_subcommand(tmp_path):
    import socket
    import subprocess
    import sys

    import requests

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    proc = subprocess.Popen([sys.executable, "-m", "medmatch", "serve-mock", "--records", "5",
                             "--port", str(port)], stdout=subprocess.PIPE, text=True)
    try:
        assert "5 records (4 with UT)" in proc.stdout.readline()
        url = proc.stdout.readline().strip()
        assert url.endswith("&doc=1")
        assert requests.get(url, timeout=5).status_code == 200
    finally:
        proc.terminate()
        proc.wait(timeout=5)
