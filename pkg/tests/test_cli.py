import csv
import json

import pytest

from photonlab import cli
from photonlab.config import builtin_document
from photonlab.timetags import HEADER_SIZE, read_tags


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    doc = builtin_document("calibrated")
    doc["run"]["n_trials"] = 20_000
    doc["figures"]["3"].update(n_trials=100_000, trials_per_point=1_000_000)
    doc["figures"]["6"]["read_power"]["num"] = 3
    p = tmp_path_factory.mktemp("cfg") / "small.json"
    p.write_text(json.dumps(doc))
    return p


@pytest.fixture(scope="module")
def trio_files(tmp_path_factory, small_config):
    d = tmp_path_factory.mktemp("trio")
    paths = {}
    for i, kind in enumerate(("input_only", "storage", "noise_only")):
        paths[kind] = d / f"{kind}.qtt"
        assert cli.main(["simulate", "--config", str(small_config), "--kind", kind, "--seed", str(10 + i),
                         "--trials", "200000", "--out", str(paths[kind])]) == 0
    return paths


def test_simulate_deterministic(tmp_path, capsys, small_config):
    outs = []
    for name in ("a.qtt", "b.qtt"):
        code, out, _ = run(capsys, "simulate", "--config", small_config, "--seed", 4, "--out", tmp_path / name)
        assert code == 0
        outs.append(out.split("sha256=")[1].split()[0])
    assert outs[0] == outs[1]
    assert (tmp_path / "a.qtt").read_bytes() == (tmp_path / "b.qtt").read_bytes()
    code, out, _ = run(capsys, "simulate", "--config", small_config, "--seed", 5, "--out", tmp_path / "c.qtt")
    assert (tmp_path / "c.qtt").read_bytes() != (tmp_path / "a.qtt").read_bytes()


def test_zero_trials(tmp_path, capsys):
    p = tmp_path / "z.qtt"
    code, out, _ = run(capsys, "simulate", "--trials", 0, "--out", p)
    assert code == 0 and p.stat().st_size == HEADER_SIZE == 80
    assert read_tags(p).n_trials == 0


def test_noise_only_counts(tmp_path, capsys):
    p = tmp_path / "n.qtt"
    code, out, _ = run(capsys, "simulate", "--kind", "noise_only", "--trials", 100_000, "--seed", 3, "--out", p)
    assert code == 0
    stored = int(out.split("stored_window_clicks=")[1].split()[0])
    # 23 expected from leakage plus ~0.0006 dark counts; 5 sigma band
    assert 23 - 5 * 23**0.5 < stored < 23 + 5 * 23**0.5


def test_csv_format(tmp_path, capsys):
    p = tmp_path / "t.csv"
    code, _, _ = run(capsys, "simulate", "--trials", 50, "--out", p)
    assert code == 0
    with open(p) as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    assert rows[0] == ["trial_index", "channel", "timestamp_ps"]
    assert sum(r[1] == "0" for r in rows[1:]) == 50
    code, _, err = run(capsys, "simulate", "--trials", 5, "--format", "csv", "--out", tmp_path / "t.qtt")
    assert code == cli.EXIT_CONFIG and "csv" in err


def test_analyze(trio_files, capsys, tmp_path):
    out = tmp_path / "r.json"
    code, text, _ = run(capsys, "analyze", trio_files["input_only"], trio_files["storage"],
                        trio_files["noise_only"], "--out", out)
    assert code == 0 and "eta_wr=" in text
    doc = json.loads(out.read_text())
    fig = doc["results"]["memory_figures"]
    assert 0.15 < fig["eta_wr"]["value"] < 0.27
    assert fig["degenerate"] is False
    assert doc["inputs"]["storage"]["sha256"]
    assert [r["n"] for r in doc["results"]["g2_input_window"]] == [0, 1, 2, 3]


def test_analyze_prints_json(trio_files, capsys):
    code, text, _ = run(capsys, "analyze", trio_files["input_only"], trio_files["storage"], trio_files["noise_only"])
    assert code == 0 and json.loads(text)["analysis"] == "memory_figures"


def test_input_as_all_three_flagged(trio_files, capsys):
    p = trio_files["input_only"]
    code, text, _ = run(capsys, "analyze", p, p, p)
    assert code == 0
    assert json.loads(text)["results"]["memory_figures"]["degenerate"] is True


def test_truncated_file(trio_files, tmp_path, capsys):
    data = trio_files["storage"].read_bytes()
    cut = tmp_path / "cut.qtt"
    cut.write_bytes(data[:-7])
    code, _, err = run(capsys, "analyze", trio_files["input_only"], cut, trio_files["noise_only"])
    assert code == cli.EXIT_PARSE
    assert "byte offset" in err


def test_lineage_mismatch(trio_files, tmp_path, capsys):
    other = tmp_path / "other.qtt"
    assert cli.main(["simulate", "--kind", "noise_only", "--trials", "1000", "--out", str(other)]) == 0
    doc = builtin_document("calibrated")
    doc["noise"]["p_noise_per_trial"] = 1e-3
    cfgp = tmp_path / "c.json"
    cfgp.write_text(json.dumps(doc))
    assert cli.main(["simulate", "--config", str(cfgp), "--kind", "noise_only", "--trials", "1000",
                     "--out", str(other)]) == 0
    capsys.readouterr()
    code, _, err = run(capsys, "analyze", trio_files["input_only"], trio_files["storage"], other)
    assert code == cli.EXIT_LINEAGE and "hash" in err


def test_exit_codes(tmp_path, capsys):
    assert run(capsys, "simulate")[0] == cli.EXIT_USAGE
    assert run(capsys, "frobnicate")[0] == cli.EXIT_USAGE
    assert run(capsys, "simulate", "--config", tmp_path / "missing.json", "--out", tmp_path / "x.qtt")[0] == cli.EXIT_IO
    assert run(capsys, "analyze", tmp_path / "a", tmp_path / "b", tmp_path / "c")[0] == cli.EXIT_IO
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema_version": 1}')
    assert run(capsys, "simulate", "--config", bad, "--out", tmp_path / "x.qtt")[0] == cli.EXIT_CONFIG
    assert run(capsys, "simulate", "--trials", -1, "--out", tmp_path / "x.qtt")[0] == cli.EXIT_CONFIG
    code, _, err = run(capsys, "reproduce", "--figure", 9, "--out", tmp_path)
    assert code == cli.EXIT_FIGURE and "unknown figure 9" in err
    garbage = tmp_path / "g.qtt"
    garbage.write_bytes(b"NOPE" + bytes(100))
    assert run(capsys, "analyze", garbage, garbage, garbage)[0] == cli.EXIT_PARSE


def test_help(capsys):
    assert run(capsys, "--help")[0] == 0


@pytest.mark.parametrize("figure,files", [
    (2, ["fig2_source_calibration.csv"]),
    (4, ["fig4_spectrum.csv"]),
    (5, ["fig5_write_power.csv"]),
])
def test_reproduce_fast(figure, files, tmp_path, capsys):
    code, out, _ = run(capsys, "reproduce", "--figure", figure, "--out", tmp_path)
    assert code == 0 and f"files={len(files)}" in out
    for name in files:
        with open(tmp_path / name) as fh:
            rows = list(csv.reader(fh))
        assert len(rows) > 2


@pytest.mark.slow
def test_reproduce_figure3(tmp_path, capsys, small_config):
    code, _, _ = run(capsys, "reproduce", "--figure", 3, "--config", small_config, "--out", tmp_path)
    assert code == 0
    summary = json.loads((tmp_path / "fig3_summary.json").read_text())
    assert summary["lifetime_fit"]["tau_us"]["value"] == pytest.approx(30, rel=0.1)
    for kind in ("input_only", "storage", "noise_only"):
        assert (tmp_path / f"fig3_histogram_{kind}.csv").exists()


@pytest.mark.slow
def test_reproduce_figure6(tmp_path, capsys, small_config):
    code, _, _ = run(capsys, "reproduce", "--figure", 6, "--config", small_config, "--out", tmp_path)
    assert code == 0
    with open(tmp_path / "fig6_read_power.csv") as fh:
        rows = list(csv.DictReader(fh))
    fw = [float(r["fwhm_ns"]) for r in rows]
    assert fw == sorted(fw, reverse=True)
    shaping = json.loads((tmp_path / "fig6_shaping.json").read_text())
    assert shaping["input_waveshape"]["mismatch"] < 0.1
