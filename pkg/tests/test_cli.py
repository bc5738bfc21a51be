"""End-to-end CLI tests (exit codes, file outputs, printed values)."""

import json

import numpy as np
import pytest

from ghostforge import analysis
from ghostforge.cli import main
from helpers import rand


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_unknown_command_exits_2(capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code == 2


def test_missing_arch_is_domain_error(capsys):
    code, _, err = run(capsys, "cost")
    assert code == 1
    assert "error:" in err


def test_build_emits_valid_json(capsys, tmp_path):
    path = str(tmp_path / "r56.json")
    code, _, _ = run(capsys, "build", "--arch", "resnet56", "--out", path)
    assert code == 0
    doc = json.load(open(path))
    assert doc["name"] == "resnet56"
    assert doc["input_shape"] == [3, 32, 32]
    assert {"name", "kind", "config", "inputs"} <= set(doc["nodes"][0])


def test_cost_c_ghostnet_totals(capsys):
    code, out, _ = run(capsys, "cost", "--arch", "c_ghostnet", "--width", "1.0",
                       "--input", "3x224x224")
    assert code == 0
    assert "multiply-accumulates" in out
    total = [ln for ln in out.splitlines() if ln.startswith("TOTAL")][0]
    # TOTAL row: name, empty kind cell, params, flops, acts
    flops = int(total.split()[2].replace(",", ""))
    assert abs(flops - 141e6) / 141e6 < 0.03


def test_cost_csv_roundtrip(capsys, tmp_path):
    spec_path = str(tmp_path / "v.json")
    run(capsys, "build", "--arch", "vgg16_cifar", "--out", spec_path)
    csv_path = str(tmp_path / "v.csv")
    code, _, _ = run(capsys, "cost", "--spec-file", spec_path, "--csv", csv_path)
    assert code == 0
    lines = open(csv_path).read().splitlines()
    assert lines[0] == "name,kind,params,flops,activations,out_shape"
    total = lines[-1].split(",")
    assert abs(int(total[2]) - 15.0e6) / 15.0e6 < 0.03


def test_convert_then_cost(capsys, tmp_path):
    spec_path = str(tmp_path / "r56.json")
    run(capsys, "build", "--arch", "resnet56", "--out", spec_path)
    conv_path = str(tmp_path / "g.json")
    code, _, _ = run(capsys, "convert", "--spec-file", spec_path, "--mode",
                     "g_ghost", "--lambda", "0.5", "--cheap", "conv1x1",
                     "--mix", "on", "--out", conv_path)
    assert code == 0
    doc = json.load(open(conv_path))
    assert any(n["kind"] == "gghost_stage" for n in doc["nodes"])
    code, out, _ = run(capsys, "cost", "--spec-file", conv_path)
    assert code == 0

    cg_path = str(tmp_path / "cg.json")
    code, _, _ = run(capsys, "convert", "--spec-file", spec_path, "--mode",
                     "c_ghost", "--s", "2", "--d", "3", "--out", cg_path)
    assert code == 0
    doc = json.load(open(cg_path))
    assert any(n["config"].get("ghost") for n in doc["nodes"]
               if n["kind"] == "basic_block")


def test_ratios_output(capsys):
    code, out, _ = run(capsys, "ratios", "--c", "256", "--k", "3", "--d", "3",
                       "--s", "2")
    assert code == 0
    assert "r_s=1.9922" in out
    assert "r_c=1.9922" in out


def test_stage_ratios_output(capsys):
    code, out, _ = run(capsys, "stage-ratios", "--flops",
                       "1,1,1,1,1,1,1,1,1", "--params", "1,1,1,1,1,1,1,1,1",
                       "--lambda", "0.5")
    assert code == 0
    assert f"r_f={9 / 3.25:.4f}" in out


def test_train_eval_cycle(capsys, tmp_path):
    spec_path = str(tmp_path / "t.json")
    with open(spec_path, "w") as f:
        f.write(json.dumps({
            "name": "t", "input_shape": [2, 8, 8], "nodes": [
                {"name": "c", "kind": "conv_unit",
                 "config": {"out_channels": 4, "kernel": 3, "stride": 1,
                            "padding": 1}, "inputs": ["input"]},
                {"name": "gap", "kind": "global_avg_pool", "config": {},
                 "inputs": ["c"]},
                {"name": "fc", "kind": "fc", "config": {"out_features": 3},
                 "inputs": ["gap"]}]}))
    ckpt = str(tmp_path / "t.ckpt")
    curve = str(tmp_path / "loss.csv")
    code, out, _ = run(capsys, "train", "--spec-file", spec_path,
                       "--data-classes", "3", "--per-class", "10",
                       "--data-shape", "2x8x8", "--steps", "8", "--lr", "0.05",
                       "--batch", "10", "--seed", "1",
                       "--out-ckpt", ckpt, "--loss-csv", curve)
    assert code == 0
    assert "train_accuracy=" in out
    assert open(curve).read().startswith("step,loss")
    code, out, _ = run(capsys, "eval", "--spec-file", spec_path,
                       "--data-classes", "3", "--per-class", "10",
                       "--data-shape", "2x8x8", "--ckpt", ckpt)
    assert code == 0
    assert out.startswith("accuracy=")


def test_bench_reports_timing(capsys, tmp_path):
    spec_path = str(tmp_path / "t.json")
    run(capsys, "build", "--arch", "resnet56", "--out", spec_path)
    code, out, _ = run(capsys, "bench", "--spec-file", spec_path, "--batch",
                       "1", "--repeat", "2")
    assert code == 0
    assert "mean=" in out and "std=" in out and "backend=" in out


def test_analyze_pairs_identity_gives_zero_rows(capsys, tmp_path):
    img = analysis.quantize_map(rand((16, 16), seed=1))
    a = str(tmp_path / "a.pgm")
    analysis.write_pgm(a, img)
    code, out, _ = run(capsys, "analyze-pairs", "--src", a, "--dst", a,
                       "--d", "1,3,5,7")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "d,mse,regularized"
    assert len(lines) == 5
    for ln in lines[1:]:
        assert float(ln.split(",")[1]) < 1e-15


def test_similarity_and_dump_features(capsys, tmp_path):
    spec_path = str(tmp_path / "r56.json")
    run(capsys, "build", "--arch", "resnet56", "--out", spec_path)
    code, out, _ = run(capsys, "similarity", "--spec-file", spec_path,
                       "--stage", "0", "--batch", "2", "--per-class", "2",
                       "--data-classes", "2")
    assert code == 0
    assert out.splitlines()[0] == "block_a,block_b,channel_a,channel_b,mse"

    outdir = str(tmp_path / "maps")
    code, out, _ = run(capsys, "dump-features", "--spec-file", spec_path,
                       "--node", "stem", "--out", outdir, "--per-class", "2",
                       "--data-classes", "2")
    assert code == 0
    assert len(out.strip().splitlines()) == 16
