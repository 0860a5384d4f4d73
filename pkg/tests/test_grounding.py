import json

import pytest
import torch

from healthlm.errors import InvalidSpec, VariantUnsupported
from healthlm.grounding import Regime, RunSpec, run, run_icl, run_zero_shot, write_run
from healthlm.lm.model import LmConfig, LmModel
from healthlm.lm.train import TuneConfig
from healthlm.tasks import ShotPlan, TaskId, build_task_dataset


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return LmModel(LmConfig(d_model=32, n_layers=1, n_heads=2, context_len=256)).eval().freeze()


@pytest.fixture(scope="module")
def calories():
    return build_task_dataset(TaskId.CALORIES, 5, 12, seed=0)


@pytest.fixture(scope="module")
def afib():
    return build_task_dataset(TaskId.IBI_TO_AFIB, 5, 10, seed=0, use_ecg=False)


SPECS = [RunSpec("calories", "zero-shot"),
         RunSpec("calories", "prompt-engineering", shot_plan=ShotPlan(3)),
         RunSpec("calories", "prompt-tuning", shot_plan=ShotPlan(3), tune_cfg=TuneConfig(steps=4, eval_every=2))]


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.regime.value)
def test_one_record_per_test_example(model, calories, spec):
    _, out = run(model, calories, spec)
    assert [r.example_id for r in out.records] == [e.example_id for e in calories.test]
    assert out.score()["n"] == len(calories.test)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.regime.value)
def test_same_spec_same_bytes(model, calories, spec, tmp_path):
    _, a = run(model, calories, spec)
    _, b = run(model, calories, spec)
    assert a.to_jsonl() == b.to_jsonl()
    pa = write_run(tmp_path / "a", a, "cfg", "data")
    pb = write_run(tmp_path / "b", b, "cfg", "data")
    assert [p.read_bytes() for p in pa] == [p.read_bytes() for p in pb]


def test_icl_without_exemplars_is_zero_shot(model, calories):
    zs = run_zero_shot(model, calories, RunSpec("calories", "zero-shot"))
    icl = run_icl(model, calories, RunSpec("calories", "prompt-engineering", shot_plan=ShotPlan(0)))
    assert [r.generated_text for r in zs.records] == [r.generated_text for r in icl.records]


def test_icl_truncation_is_a_per_example_failure(model, afib):
    _, out = run(model, afib, RunSpec("ibi_to_afib", "prompt-engineering", shot_plan=ShotPlan(3)))
    assert len(out.records) == len(afib.test)
    assert all(r.failure == "TruncationFailure" for r in out.records)
    assert out.score()["failure_rate"] == 100.0


def test_prompt_tuning_leaves_backbone_untouched(model, calories):
    before = model.checksum()
    prompt, out = run(model, calories, SPECS[2])
    assert model.checksum() == before
    assert out.metadata["backbone_before"] == out.metadata["backbone_after"] == before
    assert prompt.embedding.shape[1] == 32
    assert "final_step_score" in out.metadata and "best_step" in out.metadata


def test_zero_shot_and_icl_write_no_state(model, calories):
    before = model.checksum()
    for spec in SPECS[:2]:
        prompt, _ = run(model, calories, spec)
        assert prompt is None
    assert model.checksum() == before


def test_spec_validation():
    with pytest.raises(VariantUnsupported):
        RunSpec("calories", "zero-shot", "numerical")
    with pytest.raises(VariantUnsupported):
        RunSpec("stress_ema", "zero-shot", "numerical")
    with pytest.raises(InvalidSpec):
        RunSpec("avg_hr", "prompt-tuning")
    with pytest.raises(ValueError):
        RunSpec("avg_hr", "fine-tuning")
    assert RunSpec("avg_hr", Regime.ZERO_SHOT, "numerical").key() == "avg_hr__zero-shot__numerical__0shot__seed0"


def test_unfrozen_model_is_rejected(calories):
    with pytest.raises(InvalidSpec):
        run(LmModel(LmConfig(d_model=16, n_layers=1, n_heads=2, context_len=64)), calories, SPECS[2])


def test_manifest_contents(model, calories, tmp_path):
    _, out = run(model, calories, SPECS[1])
    _, manifest = write_run(tmp_path, out, "cfg", "data")
    m = json.loads(manifest.read_text())
    assert m["config_hash"] == "cfg" and m["dataset_hash"] == "data"
    assert m["spec"]["regime"] == "prompt-engineering" and len(m["exemplar_ids"]) == 3
    assert m["checkpoint_hash"] == model.checksum()
