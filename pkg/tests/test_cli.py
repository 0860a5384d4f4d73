import json
import os
from pathlib import Path

import pytest

from healthlm import cli
from healthlm.checkpoint import read_header

FIXTURE = Path(__file__).parent / "data" / "published_tables.json"

TINY = """\
[harness]
schema_version = 1
seed = 0
seeds = 0
tasks = {tasks}

[data]
n_train_per_class = 25
n_test = 4
use_ecg = false

[corpus]
n_chars = 20000

[lm]
d_model = 16
n_layers = 1
n_heads = 2
context_len = 320

[pretrain]
steps = 3
batch_size = 2
warmup_steps = 1
eval_every = 2

[tune]
steps = 2
batch_size = 2
eval_every = 1

[mlp]
hidden_width = 8
epochs = 5
"""


def _config(tmp_path, tasks="all"):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY.format(tasks=tasks))
    return path


def _cli(cfg, work, *args):
    return cli.main([args[0], "--config", str(cfg), "--work-dir", str(work), *args[1:]])


def _pipeline(cfg, work):
    assert _cli(cfg, work, "synth") == 0
    assert _cli(cfg, work, "build-tasks") == 0
    assert _cli(cfg, work, "pretrain") == 0
    assert _cli(cfg, work, "run", "--regime", "zero-shot") == 0
    assert _cli(cfg, work, "run", "--regime", "prompt-tuning", "--shots", "3") == 0
    assert _cli(cfg, work, "train-baseline", "--shots", "3") == 0
    assert _cli(cfg, work, "report") == 0


def _tree(root: Path, pattern: str) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob(pattern))}


def test_end_to_end_is_deterministic(tmp_path):
    cfg = _config(tmp_path, "calories,ibi_to_afib")
    a, b = tmp_path / "a", tmp_path / "b"
    _pipeline(cfg, a)
    _pipeline(cfg, b)
    for pattern in ("*.jsonl", "*.csv", "report.*", "metadata.json", "manifest.json"):
        assert _tree(a, pattern) == _tree(b, pattern), pattern
    for ckpt in sorted(a.rglob("*.ckpt")):
        assert read_header(ckpt) == read_header(b / ckpt.relative_to(a))
    report = (a / "report" / "report.txt").read_text()
    assert "calories" in report and "ibi_to_afib" in report


def test_synth_writes_raw_sources(tmp_path):
    cfg = _config(tmp_path, "ibi_to_brady,activity,stress_ema")
    assert _cli(cfg, tmp_path / "w", "synth") == 0
    out = tmp_path / "w" / "synth"
    meta = json.loads((out / "metadata.json").read_text())
    assert len(list((out / "ibi_to_brady").glob("*.ibi.csv"))) == 50 + 10 + 4
    assert len(list((out / "activity").glob("*.accel.csv"))) == 50 + 10 + 4
    assert (out / "stress_ema" / "train.csv").exists()
    assert set(meta["files"]) == {str(p.relative_to(out)) for p in out.rglob("*.csv")}


def test_numerical_calories_is_rejected(tmp_path):
    cfg = _config(tmp_path, "calories")
    work = tmp_path / "w"
    _cli(cfg, work, "build-tasks")
    _cli(cfg, work, "pretrain")
    assert _cli(cfg, work, "run", "--regime", "zero-shot", "--variant", "numerical", "--task", "calories") == 2


def test_zero_shot_writes_no_training_artifacts(tmp_path):
    cfg = _config(tmp_path, "avg_hr")
    work = tmp_path / "w"
    for cmd in ("build-tasks", "pretrain"):
        _cli(cfg, work, cmd)
    assert _cli(cfg, work, "run", "--regime", "zero-shot") == 0
    assert not (work / "checkpoints" / "prompts").exists()
    assert len(list((work / "runs").glob("*.manifest.json"))) == 1


def test_prompt_tuning_sweep_cardinality(tmp_path):
    cfg = _config(tmp_path)
    work = tmp_path / "w"
    for cmd in ("build-tasks", "pretrain"):
        _cli(cfg, work, cmd)
    assert _cli(cfg, work, "run", "--regime", "prompt-tuning", "--shots", "3,10,25", "--variant", "context") == 0
    assert len(list((work / "runs").glob("*.manifest.json"))) == 27
    assert len(list((work / "checkpoints" / "prompts").glob("*.ckpt"))) == 27


def test_missing_artifacts(tmp_path):
    cfg = _config(tmp_path, "avg_hr")
    assert _cli(cfg, tmp_path / "empty", "report") == 5
    assert _cli(cfg, tmp_path / "empty", "build-tasks") == 0
    assert _cli(cfg, tmp_path / "empty", "run", "--regime", "zero-shot") == 5


def test_report_refuses_mixed_configs(tmp_path):
    cfg = _config(tmp_path, "avg_hr")
    work = tmp_path / "w"
    for cmd in ("build-tasks",):
        _cli(cfg, work, cmd)
    assert _cli(cfg, work, "train-baseline", "--shots", "3") == 0
    assert _cli(cfg, work, "report", "--seed", "5") == 3


@pytest.mark.skipif(hasattr(os, "geteuid") and os.geteuid() == 0, reason="root can write anywhere")
def test_unwritable_directory(tmp_path):
    locked = tmp_path / "locked"
    locked.mkdir()
    locked.chmod(0o500)
    try:
        assert _cli(_config(tmp_path, "avg_hr"), locked / "w", "synth") == 3
    finally:
        locked.chmod(0o700)


def test_unwritable_path_is_an_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    # a regular file where a directory is expected cannot be created as one
    assert _cli(_config(tmp_path, "avg_hr"), blocker / "w", "synth") == 3


def test_fixture_report(tmp_path):
    out = tmp_path / "rep"
    assert cli.main(["report", "--fixture", str(FIXTURE), "--out", str(out), "--work-dir", str(tmp_path)]) == 0
    tables = json.loads((out / "report.json").read_text())["tables"]
    assert len(tables["tuned_vs_supervised"]) == 9
    assert "Prompt tuning vs supervised baseline" in (out / "report.txt").read_text()


def test_config_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[harness]\nschema_version = 1\nshots = 4\n")
    assert cli.main(["build-tasks", "--config", str(bad)]) == 2
    assert cli.main(["build-tasks", "--config", str(tmp_path / "absent.ini")]) == 2


def test_selftest_passes():
    rows = cli.selftest()
    assert [name for name, _, _ in rows] == ["calories formula", "interval to heart rate", "rhythm thresholds",
                                            "R-peak detection", "soft prompt gradient"]
    assert all(ok for _, ok, _ in rows), rows
