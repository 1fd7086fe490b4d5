import json

import numpy as np
import pytest

from tastas import checkpoint as ck
from tastas.cli import main
from tastas.mixgen import load_manifest

TINY_TRAIN_FLAGS = [
    "--n-basis", "16", "--kernel", "4", "--feature", "8", "--chunk", "6",
    "--hidden", "8", "--embed-dim", "8", "--idnet-hidden", "8",
    "--batch-size", "4", "--segment-s", "0.25", "--max-epochs", "2",
    "--patience", "2", "--seed", "0",
]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    rc = main([
        "synth", "--out", str(out), "--speakers", "6", "--utterances", "4",
        "--duration", "1.0", "--s", "2", "--train", "8", "--valid", "4",
        "--test", "4", "--seed", "5",
    ])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("run")
    rc = main([
        "train", "--manifest-dir", str(data_dir), "--out", str(out),
        "--spec", "TasTas(I, 1, 1)", *TINY_TRAIN_FLAGS,
    ])
    assert rc == 0
    return out


def test_synth_writes_manifests_and_provenance(data_dir):
    for split, count in (("train", 8), ("valid", 4), ("test", 4)):
        man = load_manifest(data_dir / f"{split}.jsonl")
        assert len(man.records) == count
        assert man.s == 2
    prov = json.loads((data_dir / "provenance.json").read_text())
    assert prov["command"][0] == "tastas"
    assert prov["seed"] == 5
    assert "timestamp" not in json.dumps(prov).lower()


def test_synth_materialize_writes_wav_tree(tmp_path):
    rc = main([
        "synth", "--out", str(tmp_path), "--speakers", "4", "--utterances", "2",
        "--duration", "0.5", "--s", "2", "--train", "2", "--valid", "1",
        "--test", "1", "--seed", "1", "--materialize",
    ])
    assert rc == 0
    man = load_manifest(tmp_path / "train.jsonl")
    rec = man.records[0]
    assert (tmp_path / "audio" / "train" / "mix" / f"{rec.record_id}.wav").exists()
    assert (tmp_path / "audio" / "train" / "s1" / f"{rec.record_id}.wav").exists()
    assert (tmp_path / "audio" / "train" / "s2" / f"{rec.record_id}.wav").exists()


def test_synth_is_idempotent(tmp_path):
    args = [
        "synth", "--speakers", "4", "--utterances", "2", "--duration", "0.5",
        "--s", "2", "--train", "3", "--valid", "2", "--test", "2", "--seed", "3",
    ]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    for name in ("train.jsonl", "valid.jsonl", "test.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synth_rejects_impossible_split(tmp_path, capsys):
    # 3 speakers cannot give S=2 mixtures plus disjoint test speakers
    rc = main([
        "synth", "--out", str(tmp_path), "--speakers", "3", "--utterances", "2",
        "--duration", "0.5", "--s", "2", "--train", "2", "--valid", "1",
        "--test", "1", "--seed", "0",
    ])
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_train_writes_checkpoint_traces_summary(run_dir):
    bundle = ck.load_bundle(run_dir / "checkpoint.ckpt")
    assert bundle.completed_steps == ["idnet", "stage1", "stage2"]
    assert all(e.frozen for e in bundle.components.values())
    assert (run_dir / "trace.csv").exists()
    summary = json.loads((run_dir / "train_summary.json").read_text())
    assert summary["mode"] == "multistep"
    assert [s["step"] for s in summary["steps"]] == ["idnet", "stage1", "stage2"]
    prov = json.loads((run_dir / "provenance.json").read_text())
    assert set(prov["inputs"]) == {"train.jsonl", "valid.jsonl"}


def test_train_resume_is_noop_when_complete(data_dir, run_dir):
    before = (run_dir / "checkpoint.ckpt").read_bytes()
    rc = main([
        "train", "--manifest-dir", str(data_dir), "--out", str(run_dir),
        "--spec", "TasTas(I, 1, 1)", "--resume", *TINY_TRAIN_FLAGS,
    ])
    assert rc == 0
    assert (run_dir / "checkpoint.ckpt").read_bytes() == before


def test_train_naive_mode(tmp_path, data_dir):
    rc = main([
        "train", "--manifest-dir", str(data_dir), "--out", str(tmp_path),
        "--spec", "TasTas(I, 1, 1)", "--naive", *TINY_TRAIN_FLAGS,
    ])
    assert rc == 0
    bundle = ck.load_bundle(tmp_path / "checkpoint_naive.ckpt")
    assert bundle.completed_steps == ["naive"]
    assert (tmp_path / "trace_naive.csv").exists()
    summary = json.loads((tmp_path / "train_summary.json").read_text())
    assert summary["mode"] == "naive"


def test_train_missing_manifest_dir_fails(tmp_path, capsys):
    rc = main([
        "train", "--manifest-dir", str(tmp_path / "absent"), "--out", str(tmp_path),
    ])
    assert rc == 2
    assert "missing manifest" in capsys.readouterr().err


def test_train_bad_spec_fails(tmp_path, data_dir, capsys):
    rc = main([
        "train", "--manifest-dir", str(data_dir), "--out", str(tmp_path),
        "--spec", "TasTas()",
    ])
    assert rc == 2
    assert "malformed model spec" in capsys.readouterr().err


def test_eval_writes_report_and_summary(tmp_path, data_dir, run_dir, capsys):
    out = tmp_path / "report.jsonl"
    rc = main([
        "eval", "--checkpoint", str(run_dir / "checkpoint.ckpt"),
        "--manifest", str(data_dir / "test.jsonl"), "--out", str(out),
        "--oracle-irm",
    ])
    assert rc == 0
    lines = out.read_text().splitlines()
    man = load_manifest(data_dir / "test.jsonl")
    assert len(lines) == len(man.records)
    summary = json.loads((tmp_path / "report.jsonl.summary.json").read_text())
    assert summary["metric"] == "si_sdr_improvement"
    assert "oracle_irm_mean_sdri" in summary
    assert summary["method"] == "TasTas(I, 1, 1)"
    stdout = capsys.readouterr().out
    assert "si_sdr_improvement" in stdout


def test_eval_self_test_mode(tmp_path, data_dir):
    out = tmp_path / "self.jsonl"
    rc = main([
        "eval", "--manifest", str(data_dir / "valid.jsonl"), "--out", str(out),
        "--self-test",
    ])
    assert rc == 0
    summary = json.loads((tmp_path / "self.jsonl.summary.json").read_text())
    assert summary["method"] == "references-as-estimates"
    assert summary["mean_sdri"] > 50.0


def test_eval_requires_checkpoint_unless_self_test(tmp_path, data_dir, capsys):
    rc = main([
        "eval", "--manifest", str(data_dir / "valid.jsonl"),
        "--out", str(tmp_path / "x.jsonl"),
    ])
    assert rc == 2
    assert "--checkpoint is required" in capsys.readouterr().err


def test_report_summarizes_and_compares_traces(tmp_path, run_dir, capsys):
    # reuse the multistep trace twice to exercise the comparison branch
    rc = main([
        "report", "--trace", str(run_dir / "trace.csv"),
        "--trace", str(run_dir / "trace.csv"),
        "--out", str(tmp_path / "report.txt"),
    ])
    assert rc == 0
    text = (tmp_path / "report.txt").read_text()
    assert "step idnet" in text
    assert "step stage1" in text
    assert "comparison:" in text
    assert capsys.readouterr().out == text


def test_report_reads_eval_summaries(tmp_path, data_dir, capsys):
    out = tmp_path / "self.jsonl"
    assert main([
        "eval", "--manifest", str(data_dir / "valid.jsonl"), "--out", str(out),
        "--self-test",
    ]) == 0
    capsys.readouterr()
    rc = main(["report", "--eval", str(tmp_path / "self.jsonl.summary.json")])
    assert rc == 0
    assert "references-as-estimates" in capsys.readouterr().out


def test_report_without_inputs_fails(capsys):
    rc = main(["report"])
    assert rc == 2
    assert "at least one" in capsys.readouterr().err


def test_usage_errors_exit_1():
    with pytest.raises(SystemExit) as exc:
        main(["train"])  # missing required flags
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out", "/tmp/x", "--speakers", "lots"])
    assert exc.value.code == 1


def test_version_flag(capsys):
    import tastas

    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert tastas.__version__ in capsys.readouterr().out
