import json

import numpy as np

from bwnsim.cli import main
from bwnsim.formats import read_feature_map, save_network, write_feature_map
from bwnsim.network import FeatureMap, LayerDescriptor, NetworkGraph


def test_plan_fits_and_capacity_exit(capsys, tmp_path):
    assert main(["plan", "--network", "resnet34", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "memory_report.json").read_text())["wcl_words"] == 401_408
    assert main(["plan", "--network", "resnet50"]) == 2
    assert "does not fit" in capsys.readouterr().err


def test_plan_empty_network(tmp_path):
    save_network(tmp_path / "e.json", NetworkGraph((2, 4, 4)))
    assert main(["plan", "--network", str(tmp_path / "e.json")]) == 0


def test_invalid_network_exit_code(tmp_path):
    save_network(tmp_path / "bad.json", NetworkGraph((2, 8, 8), (LayerDescriptor(4, kh=5, kw=5),)))
    assert main(["plan", "--network", str(tmp_path / "bad.json")]) == 1


def test_identity_network_output_equals_input(tmp_path):
    save_network(tmp_path / "id.json", NetworkGraph((2, 4, 4)))
    fm = FeatureMap(np.random.default_rng(0).uniform(-1, 1, (2, 4, 4)))
    write_feature_map(tmp_path / "in.fm", fm)
    assert main(["simulate", "--network", str(tmp_path / "id.json"), "--input", str(tmp_path / "in.fm"),
                 "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "output.fm").read_bytes() == (tmp_path / "in.fm").read_bytes()


def test_mesh_and_single_chip_outputs_are_byte_identical(tmp_path):
    base = ["simulate", "--network", "resnet34", "--resolution", "64", "--verify"]
    assert main(base + ["--out", str(tmp_path / "a")]) == 0
    assert main(base + ["--mesh", "2x2", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "output.fm").read_bytes() == (tmp_path / "b" / "output.fm").read_bytes()
    verdict = json.loads((tmp_path / "b" / "verdict.json").read_text())
    assert verdict["verdict"] == "bit-exact"
    assert (tmp_path / "b" / "traffic.csv").exists()
    assert read_feature_map(tmp_path / "a" / "output.fm").shape == (512, 2, 2)


def test_verify_mismatch_exit_code(tmp_path, monkeypatch):
    import bwnsim.cli as cli
    real = cli.network_reference
    monkeypatch.setattr(cli, "network_reference", lambda *a, **k: real(*a, **k) + np.float16(1))
    assert main(["simulate", "--network", "resnet34", "--resolution", "32", "--verify"]) == 3


def test_perf_and_sweep(capsys, tmp_path):
    assert main(["perf", "--network", "resnet34", "--op-point", "0.65V"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["cycles"] == 4_669_952 and rep["operating_point"]["label"] == "0.65V"
    assert main(["sweep", "--network", "resnet34", "--resolutions", "224,448"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "resolution,mesh,io_bits_ws,io_bits_fms,ratio" and len(lines) == 3
    assert main(["sweep", "--network", "resnet34", "--resolutions", ""]) == 0
    assert capsys.readouterr().out.strip() == "resolution,mesh,io_bits_ws,io_bits_fms,ratio"


def test_deterministic_reports(tmp_path):
    for d in ("x", "y"):
        assert main(["simulate", "--network", "resnet34", "--resolution", "32", "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "x" / "output.fm").read_bytes() == (tmp_path / "y" / "output.fm").read_bytes()


def test_mesh_trace_file(tmp_path):
    save_network(tmp_path / "n.json", NetworkGraph((2, 4, 4), (LayerDescriptor(2, scale=True),)))
    assert main(["simulate", "--network", str(tmp_path / "n.json"), "--mesh", "2x2", "--trace",
                 "--out", str(tmp_path / "o")]) == 0
    kinds = {json.loads(line)["kind"] for line in (tmp_path / "o" / "trace.jsonl").read_text().splitlines()}
    assert {"fmm-read", "bm-read", "cm-read", "fmm-write"} <= kinds
