from __future__ import annotations

import json

import pytest

from netmamba.cli import main
from netmamba.flow_repr import load_samples, read_header
from netmamba.synthetic import synthetic_capture
from netmamba.tensor import load_checkpoint


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def pcaps(tmp_path_factory):
    d = tmp_path_factory.mktemp("pcaps")
    paths = []
    for c in range(2):
        data, _ = synthetic_capture({c: 12}, seed=c, packets_per_flow=6)
        p = d / f"class{c}.pcap"
        p.write_bytes(data)
        paths.append(p)
    return paths


def test_usage_errors_exit_2(capsys):
    code, _, err = _run(capsys, "pretrain")
    assert code == 2 and json.loads(err.strip().splitlines()[-1])["error"] == "UsageError"
    assert _run(capsys, "frobnicate")[0] == 2


def test_runtime_error_exits_1(capsys, tmp_path):
    code, _, err = _run(capsys, "extract", "--pcap", tmp_path / "missing.pcap", "--out", tmp_path / "x.jsonl")
    assert code == 1 and json.loads(err)["command"] == "extract"


def test_label_count_mismatch_is_usage_error(capsys, pcaps, tmp_path):
    code = _run(capsys, "extract", "--pcap", pcaps[0], "--pcap", pcaps[1], "--label", 0, "--out", tmp_path / "x")[0]
    assert code == 2


def test_pipeline(capsys, pcaps, tmp_path):
    data = tmp_path / "samples.jsonl"
    code, out, _ = _run(capsys, "extract", "--pcap", pcaps[0], "--label", 0, "--pcap", pcaps[1], "--label", 1,
                        "--min-packets", 5, "--out", data, "--preset", "tiny", "--seed", 3)
    assert code == 0 and json.loads(out)["samples"] == 24
    assert read_header(data)["seed"] == 3 and {s.label for s in load_samples(data)} == {0, 1}

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"pretrain": {"steps": 50, "batch_size": 4}}))
    code, out, _ = _run(capsys, "pretrain", "--data", data, "--out", tmp_path / "pre", "--preset", "tiny",
                        "--config", cfg, "--steps", 2)
    assert code == 0 and json.loads(out)["steps"] == 2  # flag beats file
    assert load_checkpoint(tmp_path / "pre")[1]["config"]["pretrain"]["batch_size"] == 4

    code, out, _ = _run(capsys, "finetune", "--data", data, "--init", tmp_path / "pre", "--out", tmp_path / "ft",
                        "--epochs", 1, "--batch-size", 4, "--loss", "lda")
    assert code == 0 and 0 <= json.loads(out)["test_accuracy"] <= 1
    assert (tmp_path / "ft" / "metrics.json").exists()

    code, out, _ = _run(capsys, "classify", "--model", tmp_path / "ft", "--data", data, "--out", tmp_path / "c.jsonl")
    assert code == 0 and json.loads(out)["classified"] == 24

    code, out, _ = _run(capsys, "ood", "--model", tmp_path / "ft", "--id", data, "--ood", data,
                        "--out", tmp_path / "roc.csv")
    assert code == 0 and json.loads(out)["auroc"] == pytest.approx(0.5)

    code, out, _ = _run(capsys, "eval", "--data", data, "--model", tmp_path / "ft", "--ami", tmp_path / "ami.csv",
                        "--out", tmp_path / "eval.json")
    assert code == 0 and "accuracy" in json.loads(out) and (tmp_path / "ami.csv").exists()

    res = tmp_path / "results.jsonl"
    code, out, _ = _run(capsys, "serve", "--pcap", pcaps[0], "--model", tmp_path / "ft", "--results", res,
                        "--stats", tmp_path / "stats.csv")
    assert code == 0 and json.loads(out)["flows_classified"] == 12

    code, out, _ = _run(capsys, "query", "--results", res, "--all", "--limit", 5)
    assert code == 0 and json.loads(out)["total"] == 12 and len(json.loads(out)["flows"]) == 5
    key = json.loads(out)["flows"][0]["key"]
    code, out, _ = _run(capsys, "query", "--results", res, "--src", key["src"], "--dst", key["dst"],
                        "--sport", key["sport"], "--dport", key["dport"], "--proto", key["proto"])
    assert code == 0 and json.loads(out)["key"] == key
    code, _, err = _run(capsys, "query", "--results", res, "--src", "1.1.1.1", "--dst", "2.2.2.2",
                        "--sport", 1, "--dport", 2, "--proto", 6)
    assert code == 1 and json.loads(err)["error"] == "NotFound"

    for flag, src in [("--loss", tmp_path / "pre" / "loss.csv"), ("--roc", tmp_path / "roc.csv"),
                      ("--ami", tmp_path / "ami.csv")]:
        code, out, _ = _run(capsys, "plot", flag, src, "--out", tmp_path / f"{flag[2:]}.svg")
        assert code == 0 and (tmp_path / f"{flag[2:]}.svg").exists()
