import numpy as np
import pytest
import torch

from healthlm import checkpoint
from healthlm.baseline import MlpConfig, predict_mlp, train_mlp
from healthlm.config import (HarnessConfig, dump_config, load_config, parse_config, toy_config)
from healthlm.errors import CheckpointVersionError, ConfigError, DataError, MissingCheckpoint
from healthlm.lm.model import LmConfig, LmModel, SoftPrompt
from healthlm.tasks import TaskId, build_task_dataset


def _tiny():
    torch.manual_seed(0)
    return LmModel(LmConfig(d_model=16, n_layers=1, n_heads=2, context_len=32))


def test_model_round_trip(tmp_path):
    m = _tiny()
    path = checkpoint.save_model(tmp_path / "m.ckpt", m, seed=0, corpus_hash="abc")
    back, header = checkpoint.load_model(path)
    assert back.checksum() == m.checksum()
    assert header["kind"] == "tinylm" and header["meta"]["corpus_hash"] == "abc"
    assert all(not p.requires_grad for p in back.parameters())


def test_identical_state_gives_identical_bytes(tmp_path):
    a = checkpoint.save_model(tmp_path / "a.ckpt", _tiny(), seed=0)
    b = checkpoint.save_model(tmp_path / "b.ckpt", _tiny(), seed=0)
    assert a.read_bytes() == b.read_bytes()


def test_soft_prompt_round_trip(tmp_path):
    sp = SoftPrompt(torch.arange(32, dtype=torch.float32).reshape(2, 16))
    back, _ = checkpoint.load_soft_prompt(checkpoint.save_soft_prompt(tmp_path / "p.ckpt", sp, {"task": "x"}))
    assert torch.equal(back.embedding, sp.embedding)


def test_baseline_round_trip(tmp_path):
    ds = build_task_dataset(TaskId.CALORIES, 10, 5, seed=0)
    trained = train_mlp(ds.train, MlpConfig(hidden_width=8, epochs=20))
    back, header = checkpoint.load_baseline(checkpoint.save_baseline(tmp_path / "b.ckpt", trained))
    X = np.stack([[3.5, 50, 156], [8.5, 30, 200]])
    assert np.array_equal(predict_mlp(back, X), predict_mlp(trained, X))
    assert header["kind"] == "mlp_baseline"

    cls = build_task_dataset(TaskId.STRESS_EMA, 5, 6, seed=0)
    trained = train_mlp(cls.train, MlpConfig(hidden_width=8, epochs=20))
    back, _ = checkpoint.load_baseline(checkpoint.save_baseline(tmp_path / "c.ckpt", trained))
    assert back.predict_examples(cls.test) == trained.predict_examples(cls.test)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(MissingCheckpoint):
        checkpoint.load_tensors(tmp_path / "nope.ckpt")
    (tmp_path / "junk").write_bytes(b"not a checkpoint")
    with pytest.raises(DataError):
        checkpoint.read_header(tmp_path / "junk")
    path = checkpoint.save_tensors(tmp_path / "v.ckpt", "soft_prompt", {"embedding": np.zeros((1, 2), "f4")})
    raw = bytearray(path.read_bytes())
    raw[8] = 99  # format version field
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointVersionError):
        checkpoint.load_tensors(path)
    ok = checkpoint.save_tensors(tmp_path / "k.ckpt", "soft_prompt", {"embedding": np.zeros((1, 2), "f4")})
    with pytest.raises(DataError):
        checkpoint.load_tensors(ok, "tinylm")


def test_config_dump_parse_round_trip(tmp_path):
    cfg = toy_config(seed=7, tasks=("calories", "avg_hr"), shots=(3, 25))
    back = parse_config(dump_config(cfg))
    assert back == cfg and back.config_hash() == cfg.config_hash()
    (tmp_path / "c.ini").write_text(dump_config(cfg))
    assert load_config(tmp_path / "c.ini") == cfg


def test_config_hash_ignores_paths_but_not_settings():
    a = toy_config()
    assert a.config_hash() == toy_config(work_dir="elsewhere", jobs=3).config_hash()
    assert a.config_hash() != toy_config(seed=1).config_hash()


@pytest.mark.parametrize("text", [
    "[harness]\nseed = 1\n",                                   # no schema version
    "[harness]\nschema_version = 9\n",                         # wrong version
    "[harness]\nschema_version = 1\nshots = 3,5\n",            # shot outside the allowed set
    "[harness]\nschema_version = 1\ntasks = sleep\n",          # unknown task
    "[harness]\nschema_version = 1\n[lm]\nd_model = big\n",    # bad value
    "[harness]\nschema_version = 1\n[lm]\nwidth = 3\n",        # unknown key
    "[harness]\nschema_version = 1\n[extra]\n",                # unknown section
    "[harness]\nschema_version = 1\n[corpus]\ntask_weights = sleep:2\n",
    "[harness]\nschema_version = 1\n[corpus]\ntask_weights = phq:x\n",
    "not an ini file",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_defaults():
    cfg = HarnessConfig()
    assert cfg.shots == (3, 10, 25) and len(cfg.tasks) == 9 and cfg.run_seeds == (0,)
    assert cfg.tune.learning_rate == 3.0
    weights = toy_config().corpus.weights()
    assert weights["calories"] == 6.0 and weights["avg_hr"] == 1.0 and len(weights) == 9
