"""Zero-shot, in-context (prompt engineering) and prompt-tuning runs against a
frozen language model, scored per test example."""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import torch

from . import evalkit
from .errors import InvalidSpec, VariantUnsupported
from .lm.decode import generate_batch
from .lm.model import LmModel, SoftPrompt
from .lm.tokenizer import CharTokenizer
from .lm.train import TuneConfig, TuneResult, tune_soft_prompt
from .tasks import (TASKS, ShotPlan, TaskDataset, TaskExample, TaskId, TruncationFailure, Variant,
                    build_icl_prompt, qa_block, sample_shots, supports_variant)

EVAL_BATCH = 32
log = logging.getLogger(__name__)


class Regime(str, enum.Enum):
    ZERO_SHOT = "zero-shot"
    PROMPT_ENGINEERING = "prompt-engineering"
    PROMPT_TUNING = "prompt-tuning"


@dataclass(frozen=True)
class RunSpec:
    task: TaskId
    regime: Regime
    variant: Variant = Variant.CONTEXT_INCLUSIVE
    shot_plan: ShotPlan | None = None
    tune_cfg: TuneConfig | None = None
    seed: int = 0
    phq_mode: str = "class"

    def __post_init__(self):
        object.__setattr__(self, "task", TaskId(self.task))
        object.__setattr__(self, "regime", Regime(self.regime))
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.regime is not Regime.ZERO_SHOT and self.shot_plan is None:
            raise InvalidSpec(f"{self.regime.value} needs a shot plan")
        if not supports_variant(self.task, self.variant):
            raise VariantUnsupported(f"{self.task.value} has no {self.variant.value} rendering")
        if self.phq_mode not in ("class", "score"):
            raise InvalidSpec("phq_mode must be 'class' or 'score'")

    @property
    def shots(self) -> int:
        return 0 if self.shot_plan is None else self.shot_plan.shots

    def to_dict(self) -> dict:
        return OrderedDict([
            ("task", self.task.value), ("regime", self.regime.value), ("variant", self.variant.value),
            ("shots", self.shots), ("shot_seed", None if self.shot_plan is None else self.shot_plan.seed),
            ("tune", None if self.tune_cfg is None else self.tune_cfg.to_dict()),
            ("seed", self.seed), ("phq_mode", self.phq_mode)])

    def key(self) -> str:
        return f"{self.task.value}__{self.regime.value}__{self.variant.value}__{self.shots}shot__seed{self.seed}"


@dataclass
class RunRecord:
    example_id: str
    generated_text: str
    parsed_kind: str
    parsed_value: object
    failure: str | None
    target: object

    def to_dict(self) -> OrderedDict:
        return OrderedDict([("example_id", self.example_id), ("generated_text", self.generated_text),
                            ("parsed_kind", self.parsed_kind), ("parsed_value", self.parsed_value),
                            ("failure", self.failure), ("target", self.target)])


@dataclass
class RunOutput:
    spec: RunSpec
    records: list
    metadata: dict = field(default_factory=dict)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), allow_nan=False) + "\n" for r in self.records)

    def score(self) -> dict:
        return score_records(self.spec, self.records)

    def summary(self, dataset_hash: str = "", manifest_hash: str = "") -> evalkit.RunSummary:
        s = self.score()
        return evalkit.RunSummary(self.spec.task.value, self.spec.regime.value, self.spec.variant.value,
                                  self.spec.shots, self.spec.seed, s["metric_name"], s["metric_value"],
                                  s["failure_rate"], s["n"], dataset_hash, manifest_hash)


def max_new_tokens(task) -> int:
    info = TASKS[TaskId(task)]
    if TaskId(task) is TaskId.PHQ_SCORE:
        return 4
    if info.kind == "classification":
        return max(len(c) for c in info.classes) + 2
    return 8


def _target(example: TaskExample, spec: RunSpec):
    if spec.task is TaskId.PHQ_SCORE and spec.phq_mode == "class":
        return example.label
    return example.answer_value


def _record(example: TaskExample, spec: RunSpec, text: str | None, failure: str | None) -> RunRecord:
    target = _target(example, spec)
    if failure is not None:
        return RunRecord(example.example_id, "", evalkit.AnswerKind.PARSE_FAILURE.value, None, failure, target)
    parsed = evalkit.parse_answer(text, spec.task)
    value = parsed.label if parsed.label is not None else parsed.number
    if spec.task is TaskId.PHQ_SCORE and spec.phq_mode == "class" and value is not None:
        from .synth import phq_class_for
        value = phq_class_for(value)
    return RunRecord(example.example_id, text, parsed.kind.value, value,
                     "ParseFailure" if parsed.failed else None, target)


def score_records(spec: RunSpec, records: list) -> dict:
    n = len(records)
    failures = sum(r.failure is not None for r in records)
    classification = TASKS[spec.task].kind == "classification" and not (
        spec.task is TaskId.PHQ_SCORE and spec.phq_mode == "score")
    if classification:
        counts = evalkit.accuracy_counts([r.parsed_value if r.failure is None else None for r in records],
                                         [r.target for r in records])
        acc, _, fail = counts.percentages()
        return {"metric_name": "accuracy", "metric_value": float(acc), "failure_rate": float(fail), "n": n}
    ok = [r for r in records if r.failure is None]
    value = evalkit.mae([r.parsed_value for r in ok], [r.target for r in ok]) if ok else float("nan")
    return {"metric_name": "mae", "metric_value": value, "failure_rate": 100.0 * failures / n, "n": n}


def _decode_all(model: LmModel, prompt: SoftPrompt | None, texts: list[str | None], max_new: int,
                tokenizer: CharTokenizer) -> list[tuple[str | None, str | None]]:
    """Greedy answers for query texts; ``None`` texts are passed through as
    truncation failures. Batches are formed in length order, results are
    returned in input order."""
    p = prompt.prompt_len if prompt is not None else 0
    ctx = model.config.context_len
    out: list = [None] * len(texts)
    encoded = {}
    for i, text in enumerate(texts):
        if text is None:
            out[i] = (None, "TruncationFailure")
            continue
        ids = tokenizer.encode(text, bos=True)
        if len(ids) + p + max_new > ctx:
            out[i] = (None, "ContextOverflow")
        else:
            encoded[i] = ids
    order = sorted(encoded, key=lambda i: (len(encoded[i]), i))
    for start in range(0, len(order), EVAL_BATCH):
        chunk = order[start:start + EVAL_BATCH]
        gens = generate_batch(model, prompt, [encoded[i] for i in chunk], max_new)
        for i, g in zip(chunk, gens):
            out[i] = (tokenizer.decode(g), None)
    return out


def _evaluate(model, prompt, dataset: TaskDataset, spec: RunSpec, queries: list[str | None],
              tokenizer, examples=None) -> list[RunRecord]:
    examples = dataset.test if examples is None else examples
    decoded = _decode_all(model, prompt, queries, max_new_tokens(spec.task), tokenizer)
    return [_record(ex, spec, text, failure) for ex, (text, failure) in zip(examples, decoded)]


def _selection_score(spec: RunSpec, records: list) -> tuple:
    """Checkpoint ranking key on decoded validation answers: fewer failures
    first, then the task metric (higher accuracy, lower MAE)."""
    s = score_records(spec, records)
    value = s["metric_value"] if s["metric_name"] == "accuracy" else -s["metric_value"]
    if value != value:  # every answer failed, so the failure rate already ranks it last
        value = 0.0
    return -s["failure_rate"], value


def _meta(model: LmModel, spec: RunSpec, started: float, **extra) -> dict:
    meta = OrderedDict([("spec", spec.to_dict()), ("checkpoint_hash", model.checksum()),
                        ("context_len", model.config.context_len)])
    meta.update(extra)
    # wall time goes to the log only, so manifests stay byte-reproducible
    log.info("%s finished in %.1f s", spec.key(), time.perf_counter() - started)
    return meta


def run_zero_shot(model: LmModel, dataset: TaskDataset, spec: RunSpec,
                  tokenizer: CharTokenizer | None = None) -> RunOutput:
    if spec.regime is not Regime.ZERO_SHOT:
        raise InvalidSpec("run_zero_shot needs a zero-shot spec")
    tokenizer = tokenizer or CharTokenizer()
    started = time.perf_counter()
    queries = [qa_block(ex.prompt(spec.variant)) for ex in dataset.test]
    records = _evaluate(model, None, dataset, spec, queries, tokenizer)
    return RunOutput(spec, records, _meta(model, spec, started))


def run_icl(model: LmModel, dataset: TaskDataset, spec: RunSpec,
            tokenizer: CharTokenizer | None = None) -> RunOutput:
    if spec.regime is not Regime.PROMPT_ENGINEERING:
        raise InvalidSpec("run_icl needs a prompt-engineering spec")
    tokenizer = tokenizer or CharTokenizer()
    started = time.perf_counter()
    exemplars = sample_shots(dataset.train, spec.shot_plan) if spec.shots else []
    budget = model.config.context_len - max_new_tokens(spec.task)
    queries = []
    for ex in dataset.test:
        built = build_icl_prompt(exemplars, ex, budget, spec.variant, tokenizer)
        queries.append(None if isinstance(built, TruncationFailure) else built)
    records = _evaluate(model, None, dataset, spec, queries, tokenizer)
    return RunOutput(spec, records, _meta(model, spec, started,
                                          exemplar_ids=[e.example_id for e in exemplars]))


def tuning_pairs(examples: list[TaskExample], variant, tokenizer: CharTokenizer) -> list:
    return [(tokenizer.encode(qa_block(ex.prompt(variant)), bos=True),
             tokenizer.encode(ex.answer_text, eos=True)) for ex in examples]


def run_prompt_tuning(model: LmModel, dataset: TaskDataset, spec: RunSpec,
                      tokenizer: CharTokenizer | None = None) -> tuple[SoftPrompt, RunOutput]:
    """Tune a soft prompt on the sampled shots and evaluate the
    best-validation prompt on the test split (the final-step prompt's score
    is kept in the metadata). Checkpoints are ranked on decoded validation
    answers, then validation loss."""
    if spec.regime is not Regime.PROMPT_TUNING:
        raise InvalidSpec("run_prompt_tuning needs a prompt-tuning spec")
    if not model.frozen:
        raise InvalidSpec("prompt tuning needs a frozen model")
    tokenizer = tokenizer or CharTokenizer()
    cfg = spec.tune_cfg or TuneConfig(seed=spec.seed)
    started = time.perf_counter()
    shots = sample_shots(dataset.train, spec.shot_plan)
    train = tuning_pairs(shots, spec.variant, tokenizer)
    val = tuning_pairs(dataset.validation, spec.variant, tokenizer) or None
    scorer = None
    if dataset.validation:
        val_queries = [qa_block(ex.prompt(spec.variant)) for ex in dataset.validation]

        def scorer(prompt):
            return _selection_score(spec, _evaluate(model, prompt, dataset, spec, val_queries, tokenizer,
                                                    dataset.validation))
    result: TuneResult = tune_soft_prompt(model, train, cfg, val, scorer)
    queries = [qa_block(ex.prompt(spec.variant)) for ex in dataset.test]
    records = _evaluate(model, result.prompt, dataset, spec, queries, tokenizer)
    if result.best_step == cfg.steps:
        final_records = records
    else:
        final_records = _evaluate(model, result.final_prompt, dataset, spec, queries, tokenizer)
    meta = _meta(model, spec, started,
                 shot_ids=[e.example_id for e in shots],
                 best_step=result.best_step, best_val_loss=result.best_val_loss,
                 val_scores=result.val_scores,
                 final_step_score=score_records(spec, final_records),
                 backbone_before=result.backbone_before, backbone_after=result.backbone_after,
                 prompt_hash=prompt_hash(result.prompt))
    return result.prompt, RunOutput(spec, records, meta)


def run(model: LmModel, dataset: TaskDataset, spec: RunSpec, tokenizer=None):
    """Dispatch on the regime; returns ``(soft_prompt_or_None, RunOutput)``."""
    if spec.regime is Regime.ZERO_SHOT:
        return None, run_zero_shot(model, dataset, spec, tokenizer)
    if spec.regime is Regime.PROMPT_ENGINEERING:
        return None, run_icl(model, dataset, spec, tokenizer)
    return run_prompt_tuning(model, dataset, spec, tokenizer)


def prompt_hash(prompt: SoftPrompt) -> str:
    return hashlib.sha256(prompt.embedding.detach().cpu().numpy().tobytes()).hexdigest()


def write_run(directory, output: RunOutput, config_hash: str = "", dataset_hash: str = "") -> tuple[Path, Path]:
    """``<key>.jsonl`` records plus ``<key>.manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    key = output.spec.key()
    records = directory / f"{key}.jsonl"
    records.write_text(output.to_jsonl(), encoding="utf-8")
    manifest = OrderedDict([("config_hash", config_hash), ("dataset_hash", dataset_hash),
                            ("records_sha256", hashlib.sha256(records.read_bytes()).hexdigest()),
                            ("score", output.score())])
    manifest.update(output.metadata)
    path = directory / f"{key}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")
    return records, path


def set_threads(jobs: int):
    torch.set_num_threads(max(1, int(jobs)))
