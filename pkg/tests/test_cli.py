import csv
import json
import os

import numpy as np
import pytest

from mlhhg import cli, runner
from mlhhg.errors import StepSizeError


def bundle(capsys):
    return capsys.readouterr().out.strip().splitlines()[-1]


def test_bands_csv_and_couplings(tmp_path, capsys):
    assert cli.main(["--out", str(tmp_path), "bands", "--n-k", "33", "--n-bands", "4", "--couplings"]) == 0
    out = bundle(capsys)
    with open(os.path.join(out, "bands.csv"), newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["k", "e1", "e2", "e3", "e4"] and len(rows) == 34
    assert float(rows[17][1]) == pytest.approx(-0.5257897, abs=1e-6)
    data = json.load(open(os.path.join(out, "band_couplings.json")))
    assert np.array(data["couplings"]).shape == (33, 4, 4)
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    assert set(manifest["files"]) == {"bands.csv", "band_couplings.json"}
    assert os.path.basename(out).endswith(manifest["content_hash"][:12])


def test_propagate_time_series(tmp_path, capsys):
    args = ["--out", str(tmp_path), "propagate", "--system", "builtin:two-level", "--omega", "0.1",
            "--rabi", "1", "--n-cycles", "2", "--basis", "both"]
    assert cli.main(args) == 0
    out = bundle(capsys)
    with open(os.path.join(out, "trajectory.csv"), newline="") as fh:
        header = next(csv.reader(fh))
    assert header == ["t", "re_c1", "im_c1", "re_c2", "im_c2", "j", "j_intra", "j_inter"]
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    assert manifest["resolved"]["dt"] > 0 and manifest["summary"]["basis_difference"] < 1e-6


def test_predict_and_sfa(tmp_path, capsys):
    base = ["--out", str(tmp_path)]
    assert cli.main(base + ["predict", "--wavelength-nm", "3200", "--E0", "4.1e-3", "--bands",
                            "--valence", "1", "--conduction", "2"]) == 0
    pred = json.load(open(os.path.join(bundle(capsys), "predict.json")))
    assert pred["bounds"]["plateaus"][1]["cutoff_order"] == pytest.approx(110.05, abs=0.01)
    assert "merge_threshold" in pred and "saddles" in pred
    assert cli.main(base + ["sfa", "--wavelength-nm", "3200", "--E0", "4.1e-3", "--valence", "1",
                            "--conduction", "2"]) == 0
    out = bundle(capsys)
    assert os.path.exists(os.path.join(out, "sfa_current.csv"))
    assert json.load(open(os.path.join(out, "sfa_saddles.json")))["m"] == [0, 1]


def test_wavelet_and_spectrum(tmp_path, capsys):
    base = ["--out", str(tmp_path), "--seedless"]
    flags = ["--system", "builtin:two-level", "--omega", "0.1", "--rabi", "2", "--n-cycles", "4"]
    assert cli.main(base + ["wavelet"] + flags + ["--energies", "0.2", "3", "8"]) == 0
    out = bundle(capsys)
    with open(os.path.join(out, "wavelet.csv"), newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows[0]) == 9
    assert os.path.exists(os.path.join(out, "overlay.csv"))
    assert cli.main(base + ["spectrum"] + flags + ["--plateaus", "1"]) == 0
    assert os.path.exists(os.path.join(bundle(capsys), "plateaus.json"))


def test_manifest_rerun_is_byte_identical(tmp_path):
    first = runner.run("fig3a", str(tmp_path / "a"))
    again = runner.run(os.path.join(first.directory, "manifest.json"), str(tmp_path / "b"))
    assert os.path.basename(first.directory) == os.path.basename(again.directory)
    for name in list(first.manifest["files"]) + ["manifest.json"]:
        with open(os.path.join(first.directory, name), "rb") as a, open(os.path.join(again.directory, name), "rb") as b:
            assert a.read() == b.read(), name


def test_csv_is_rfc4180(tmp_path):
    path = tmp_path / "x.csv"
    runner.write_csv(path, ["a", "b"], [[0.1, 1e-300], [2.0, -3.5]])
    raw = path.read_bytes()
    assert raw == b"a,b\r\n0.1,2.0\r\n1e-300,-3.5\r\n"


def test_scan_order_independent_of_workers(tmp_path):
    text = runner.recipe_text("fig2-scan").replace("count = 7", "count = 3").replace(
        "n_cycles = 11", "n_cycles = 4")
    from mlhhg.config import RunConfig

    cfg = RunConfig.from_text(text)
    rows1, failed1, d1 = runner.scan(cfg, str(tmp_path / "serial"), threads=1)
    rows2, failed2, d2 = runner.scan(cfg, str(tmp_path / "pool"), threads=3)
    assert failed1 == failed2 == 0
    for name in ("scan.csv", "scan.json"):
        assert open(os.path.join(d1, name), "rb").read() == open(os.path.join(d2, name), "rb").read()
    assert [r["rabi"] for r in rows1] == [0.5, 1.75, 3.0]


def test_scan_merge_flag_flips(tmp_path):
    from mlhhg.config import RunConfig

    cfg = RunConfig.from_text(runner.recipe_text("fig4-scan").replace(
        "values = 3.5e-3, 3.8e-3, 4.1e-3, 4.4e-3, 4.7e-3, 5.0e-3, 5.5e-3, 6.0e-3", "values = 4.1e-3, 5.5e-3"))
    rows, _, _ = runner.scan(cfg, str(tmp_path), threads=2)
    assert [r["merged"] for r in rows] == [False, True]


def test_failed_points_and_exit_code(tmp_path, monkeypatch, capsys):
    calls = {"n": 0}
    real = runner.propagate_bloch

    def flaky(system, pulse, *args):
        calls["n"] += 1
        if pulse.A0 > 2.5:
            raise StepSizeError("norm drift")
        return real(system, pulse, *args)

    monkeypatch.setattr(runner, "propagate_bloch", flaky)
    cfg_path = tmp_path / "scan.cfg"
    cfg_path.write_text(runner.recipe_text("fig2-scan").replace("count = 7", "count = 3").replace(
        "n_cycles = 11", "n_cycles = 3"))
    code = cli.main(["--out", str(tmp_path / "o"), "scan", str(cfg_path)])
    out = capsys.readouterr()
    assert code == 3 and "failed" in out.out and "33%" in out.err
    rows = json.load(open(os.path.join(out.out.strip().splitlines()[-1], "scan.json")))["rows"]
    assert [r["status"] for r in rows] == ["ok", "ok", "failed"]


def test_numeric_failure_exit_code_names_stage(tmp_path, monkeypatch, capsys):
    def broken(*args, **kwargs):
        raise StepSizeError("norm drift 1e-3")

    monkeypatch.setattr(runner, "propagate_bloch", broken)
    assert cli.main(["--out", str(tmp_path), "run", "fig3a"]) == 3
    assert "stage propagate-bloch" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[pulse]\nomega = 0.1\nA0 = nope\n")
    assert cli.main(["run", str(bad)]) == 2
    assert f"{bad}:3:" in capsys.readouterr().err
    assert cli.main(["run", "no-such-recipe"]) == 2


def test_seedless_guard(monkeypatch):
    def uses_rng(args):
        return int(np.random.rand() > 2)

    monkeypatch.setattr(cli, "cmd_run", uses_rng)
    monkeypatch.setattr(cli, "build_parser", _parser_with(uses_rng))
    with pytest.raises(RuntimeError, match="seedless"):
        cli.main(["--seedless", "run", "fig1"])
    assert cli.main(["run", "fig1"]) == 0
    # restored afterwards
    assert 0 <= np.random.rand() < 1


def _parser_with(func):
    build = cli.build_parser

    def patched():
        parser = build()
        parser.set_defaults(func=func)
        sub = parser._subparsers._group_actions[0].choices["run"]
        sub.set_defaults(func=func)
        return parser

    return patched
