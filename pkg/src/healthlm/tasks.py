"""The nine health tasks: prompt templates, example synthesis, few-shot splits.

Prompts follow the consumer-health task templates word for word. Cardiovascular
and activity tasks also have a numerical-only rendering (the bare
comma-separated values); calories and the two mental-health tasks do not.
"""
from __future__ import annotations

import enum
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import signals, synth
from .errors import InsufficientPool, ShapeMismatch, VariantUnsupported, DataError
from .rng import make_rng
from .signals import RhythmLabel

SEQUENCE_LENGTH = 32
ACTIVITY_SECONDS = 5
ECG_SOURCE_HZ = 250.0
ECG_TARGET_HZ = 125.0
ECG_NOISE_SD = 0.05
VALIDATION_FRACTION = 0.2


class TaskId(str, enum.Enum):
    AVG_HR = "avg_hr"
    IBI_TO_HR = "ibi_to_hr"
    IBI_TO_AFIB = "ibi_to_afib"
    IBI_TO_BRADY = "ibi_to_brady"
    IBI_TO_TACHY = "ibi_to_tachy"
    ACTIVITY_REC = "activity"
    CALORIES = "calories"
    STRESS_EMA = "stress_ema"
    PHQ_SCORE = "phq"


class Variant(str, enum.Enum):
    CONTEXT_INCLUSIVE = "context"
    NUMERICAL_ONLY = "numerical"


class Split(str, enum.Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


@dataclass(frozen=True)
class TaskInfo:
    domain: str
    kind: str  # "regression" | "classification"
    template: str
    classes: tuple = ()
    decimals: int = 1  # numeric answer rendering
    value_decimals: int = 0  # sequence value rendering
    unit: str = ""

    @property
    def numeric_variant(self) -> bool:
        return self.domain in ("cardio", "activity")


_IBI_CLASSIFY = ("Classify the given interbeat interval sequence in ms as either {first} or "
                 "Normal Sinus: {{values}}")
_MHEALTH = ("Steps: {steps}, resting heart rate: {rhr_bpm} beats/min, sleep duration: "
            "{sleep_minutes} minutes, non-REM heart rate {nrem_hr_bpm} beats/min")

TASKS: dict[TaskId, TaskInfo] = {
    TaskId.AVG_HR: TaskInfo(
        "cardio", "regression",
        "Given a sequence of heart rates, calculate the average heart rate: {values}",
        unit="beats/min"),
    TaskId.IBI_TO_HR: TaskInfo(
        "cardio", "regression",
        "Calculate heart rate based on the given inter-beat intervals in ms: {values}",
        unit="beats/min"),
    TaskId.IBI_TO_AFIB: TaskInfo(
        "cardio", "classification", _IBI_CLASSIFY.format(first="Atrial Fibrillation"),
        classes=("Atrial Fibrillation", "Normal Sinus")),
    TaskId.IBI_TO_BRADY: TaskInfo(
        "cardio", "classification", _IBI_CLASSIFY.format(first="Sinus Bradycardia"),
        classes=("Sinus Bradycardia", "Normal Sinus")),
    TaskId.IBI_TO_TACHY: TaskInfo(
        "cardio", "classification", _IBI_CLASSIFY.format(first="Sinus Tachycardia"),
        classes=("Sinus Tachycardia", "Normal Sinus")),
    TaskId.ACTIVITY_REC: TaskInfo(
        "activity", "classification",
        "Classify the following accelerometer data in meters per second squared as either "
        "walking or running: {values}",
        classes=("Walking", "Running"), value_decimals=2),
    TaskId.CALORIES: TaskInfo(
        "metabolic", "regression",
        "How many total calories will I burn after {activity} for {duration_min} minutes? "
        "My weight is {weight_lbs} lbs.",
        unit="calories"),
    TaskId.STRESS_EMA: TaskInfo(
        "mhealth", "classification",
        _MHEALTH + ", mood last day {mood} out of 5. What will my stress level be?",
        classes=("Stressed", "Not Stressed")),
    TaskId.PHQ_SCORE: TaskInfo(
        "mhealth", "classification",
        _MHEALTH + ". feeling last month: {mood} out of 5. What will my PHQ score be?",
        classes=("AtOrAboveThreshold", "BelowThreshold"), decimals=0),
}

DOMAINS = ("cardio", "activity", "metabolic", "mhealth")
CALORIE_KEYS = ("activity", "duration_min", "weight_lbs")
MHEALTH_KEYS = synth.FEATURES
_MONTHLY_DECIMALS = {"steps": 0, "rhr_bpm": 1, "sleep_minutes": 0, "nrem_hr_bpm": 1, "mood": 1}


def task_info(task) -> TaskInfo:
    return TASKS[TaskId(task)]


def supports_variant(task, variant) -> bool:
    return Variant(variant) is Variant.CONTEXT_INCLUSIVE or task_info(task).numeric_variant


def format_number(value: float, decimals: int) -> str:
    """Integral rendering for ``decimals == 0``; otherwise fixed-point with
    trailing zeros trimmed, keeping at least one decimal."""
    if decimals == 0:
        return str(int(round(value)))
    text = f"{value:.{decimals}f}".rstrip("0")
    return text + "0" if text.endswith(".") else text


def format_sequence(values, decimals: int) -> str:
    return ",".join(format_number(v, decimals) for v in values)


def _check_shape(task: TaskId, input_values):
    info = TASKS[task]
    if task is TaskId.CALORIES:
        if not isinstance(input_values, dict) or set(input_values) != set(CALORIE_KEYS):
            raise ShapeMismatch(f"{task.value} expects a dict with keys {CALORIE_KEYS}")
    elif info.domain == "mhealth":
        if not isinstance(input_values, dict) or set(input_values) != set(MHEALTH_KEYS):
            raise ShapeMismatch(f"{task.value} expects a dict with keys {MHEALTH_KEYS}")
    else:
        if isinstance(input_values, (dict, str)) or np.ndim(input_values) != 1 or len(input_values) == 0:
            raise ShapeMismatch(f"{task.value} expects a non-empty numeric sequence")


def render_prompt(task, input_values, variant=Variant.CONTEXT_INCLUSIVE) -> str:
    task, variant = TaskId(task), Variant(variant)
    info = TASKS[task]
    if not supports_variant(task, variant):
        raise VariantUnsupported(f"{task.value} has no {variant.value} rendering")
    _check_shape(task, input_values)
    if task is TaskId.CALORIES:
        v = input_values
        return info.template.format(activity=v["activity"],
                                    duration_min=format_number(v["duration_min"], 0),
                                    weight_lbs=format_number(v["weight_lbs"], 0))
    if info.domain == "mhealth":
        decimals = _MONTHLY_DECIMALS if task is TaskId.PHQ_SCORE else dict.fromkeys(MHEALTH_KEYS, 0)
        return info.template.format(**{k: format_number(input_values[k], decimals[k])
                                       for k in MHEALTH_KEYS})
    values = format_sequence(input_values, info.value_decimals)
    if variant is Variant.NUMERICAL_ONLY:
        return values
    return info.template.format(values=values)


def answer_text_for(task, value) -> str:
    info = task_info(task)
    if TaskId(task) is TaskId.PHQ_SCORE:
        return format_number(value, 0)
    if info.kind == "classification":
        return str(value)
    return format_number(value, info.decimals)


def answer_tolerance(task) -> float:
    """Largest gap between a numeric answer value and its rendered text."""
    info = task_info(task)
    if info.kind == "classification" and TaskId(task) is not TaskId.PHQ_SCORE:
        return 0.0
    return 0.5 * 10.0 ** (-info.decimals) + 1e-9


@dataclass
class TaskExample:
    task: TaskId
    prompt_context: str
    prompt_numeric: str | None
    input_values: Any
    answer_text: str
    answer_value: Any
    split: Split
    example_id: str
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def prompt(self, variant=Variant.CONTEXT_INCLUSIVE) -> str:
        variant = Variant(variant)
        if variant is Variant.NUMERICAL_ONLY:
            if self.prompt_numeric is None:
                raise VariantUnsupported(f"{self.task.value} has no numerical-only rendering")
            return self.prompt_numeric
        return self.prompt_context

    @property
    def label(self) -> str | None:
        """Class label used for balancing and scoring (None for regression)."""
        if self.task is TaskId.PHQ_SCORE:
            return synth.phq_class_for(self.answer_value)
        if task_info(self.task).kind == "classification":
            return self.answer_value
        return None


def make_example(task, input_values, answer_value, split=Split.TRAIN, example_id="", seed=0,
                 meta=None) -> TaskExample:
    task = TaskId(task)
    numeric = (render_prompt(task, input_values, Variant.NUMERICAL_ONLY)
               if TASKS[task].numeric_variant else None)
    return TaskExample(task, render_prompt(task, input_values), numeric, input_values,
                       answer_text_for(task, answer_value), answer_value, Split(split),
                       example_id, seed, dict(meta or {}))


# ----------------------------------------------------------------- synthesis

def extract_ibis(ibis, seed: int, *keys, noise_sd: float = ECG_NOISE_SD) -> np.ndarray:
    """Run generator intervals through ECG synthesis at 250 Hz, resampling to
    125 Hz, R-peak detection and interval extraction."""
    ecg, _ = synth.gen_ecg_from_ibis(ibis, ECG_SOURCE_HZ, seed, noise_sd=noise_sd, offset_s=0.5)
    ecg = signals.resample(ecg, ECG_TARGET_HZ)
    peaks = signals.detect_r_peaks(ecg)
    return np.round(signals.peaks_to_ibis(peaks, ECG_TARGET_HZ).intervals_ms).astype(int)


def _rhythm_spec(label: RhythmLabel, rng, broad: bool, n_beats: int) -> synth.RhythmGenSpec:
    if not broad:
        return synth.default_rhythm_spec(label, n_beats=n_beats)
    if label is RhythmLabel.ATRIAL_FIBRILLATION:
        return synth.default_rhythm_spec(label, n_beats, mean_rr_ms=rng.uniform(550, 1050),
                                         cv=rng.uniform(0.15, 0.35))
    centre = {RhythmLabel.NORMAL_SINUS: (650, 1000), RhythmLabel.SINUS_BRADYCARDIA: (1050, 1500),
              RhythmLabel.SINUS_TACHYCARDIA: (400, 590)}[label]
    return synth.default_rhythm_spec(label, n_beats, mean_rr_ms=rng.uniform(*centre),
                                     cv=rng.uniform(0.02, 0.08), lag1_corr=rng.uniform(0.1, 0.6))


def _cardio_sequence(spec, seed, keys, use_ecg: bool) -> np.ndarray:
    ibis = synth.gen_ibi_sequence(spec, seed, *keys)
    if use_ecg:
        return extract_ibis(ibis, seed, *keys)
    # 8 ms quantisation matches interval extraction at 125 Hz
    return (np.round(ibis.intervals_ms / 8.0) * 8).astype(int)


def synthesize_inputs(task, target, seed: int, *keys, broad: bool = False, use_ecg: bool = True):
    """Raw inputs and answer value for one example of ``task``.

    ``target`` is the class label to draw (classification) or ignored
    (regression). ``broad=True`` widens generator parameter ranges; it is used
    for the language-model pretraining corpus.
    Returns ``(input_values, answer_value, meta)``.
    """
    task = TaskId(task)
    rng = make_rng(seed, "task", task.value, *keys)
    if TASKS[task].domain == "cardio":
        return _cardio_inputs(task, target, seed, keys, rng, broad, use_ecg)
    if task is TaskId.ACTIVITY_REC:
        activity = str(target).lower()
        window = synth.gen_accel(activity, ACTIVITY_SECONDS, seed, task.value, *keys)
        values = [round(float(v), 2) for v in window.magnitudes_mps2]
        if broad:
            scale = rng.uniform(0.9, 1.1)
            values = [round(v * scale, 2) for v in values]
        return values, activity.capitalize(), {}
    if task is TaskId.CALORIES:
        rec = synth.gen_calorie_record(seed, task.value, *keys)
        if broad:
            duration, weight = float(rng.integers(5, 121)), float(rng.integers(90, 301))
            rec = synth.CalorieRecord(rec.activity, duration, weight,
                                      synth.calories_burned(rec.activity, duration, weight))
        inputs = {"activity": rec.activity, "duration_min": rec.duration_min,
                  "weight_lbs": rec.weight_lbs}
        return inputs, rec.calories, {}
    if task is TaskId.STRESS_EMA:
        day = synth.gen_wearable_day(seed, task.value, *keys, target_label=target)
        return day.features(), day.stress_label, {}
    rec = synth.gen_phq_record(seed, task.value, *keys, target_class=target)
    return dict(rec.four_week_means), float(rec.phq_score), {"phq_class": rec.phq_class}


def _cardio_inputs(task, target, seed, keys, rng, broad, use_ecg):
    n_beats = SEQUENCE_LENGTH + 4
    for attempt in range(50):
        akeys = (*keys, attempt)
        if task in (TaskId.AVG_HR, TaskId.IBI_TO_HR):
            label = list(RhythmLabel)[int(rng.integers(4))]
            spec = synth.default_rhythm_spec(
                label, n_beats=n_beats,
                mean_rr_ms=rng.uniform(420, 1400) if broad else rng.uniform(450, 1300),
                cv=0.25 if label is RhythmLabel.ATRIAL_FIBRILLATION else rng.uniform(0.02, 0.08))
        else:
            label = RhythmLabel(target)
            spec = _rhythm_spec(label, rng, broad, n_beats)
        try:
            seq = _cardio_sequence(spec, seed, (task.value, *akeys), use_ecg)
        except DataError:
            continue
        if len(seq) < SEQUENCE_LENGTH:
            continue
        seq = [int(v) for v in seq[:SEQUENCE_LENGTH]]
        rule = signals.classify_rhythm_rule(signals.ibi_to_hr(seq))
        if task in (TaskId.IBI_TO_BRADY, TaskId.IBI_TO_TACHY) and rule is not label:
            continue
        if task is TaskId.IBI_TO_AFIB and label is RhythmLabel.NORMAL_SINUS and rule is not label:
            continue
        if task is TaskId.AVG_HR:
            hr = [int(round(v)) for v in signals.instantaneous_hr(seq)]
            return hr, signals.mean_hr(hr), {"source_rhythm": label.value, "ibis": seq}
        if task is TaskId.IBI_TO_HR:
            return seq, signals.ibi_to_hr(seq), {"source_rhythm": label.value}
        return seq, label.value, {}
    raise InsufficientPool(f"could not synthesize a {task.value} example for {target!r}")


@dataclass
class TaskDataset:
    task: TaskId
    seed: int
    train: list
    validation: list
    test: list

    def split(self, split) -> list:
        return {Split.TRAIN: self.train, Split.VALIDATION: self.validation,
                Split.TEST: self.test}[Split(split)]

    def all_examples(self) -> list:
        return self.train + self.validation + self.test


def _targets(task: TaskId, n: int, per_class: bool) -> list:
    info = TASKS[task]
    if info.kind != "classification":
        return [None] * n
    classes = info.classes
    if per_class:
        return [c for _ in range(n) for c in classes]
    if n % len(classes):
        raise InsufficientPool(f"{n} examples cannot be split evenly over {len(classes)} classes")
    return [classes[i % len(classes)] for i in range(n)]


def build_task_dataset(task, n_train_per_class: int = 25, n_test: int = 100, seed: int = 0,
                       n_validation: int | None = None, use_ecg: bool = True) -> TaskDataset:
    """Train / validation / test examples for one task.

    Classification tasks get ``n_train_per_class`` examples of every class and a
    balanced test split; regression tasks get ``n_train_per_class`` examples in
    total. The validation split defaults to 20% of the training count.
    """
    task = TaskId(task)
    if n_train_per_class <= 0 or n_test <= 0:
        raise InsufficientPool("split sizes must be positive")
    n_classes = max(1, len(TASKS[task].classes))
    n_train = n_train_per_class * n_classes
    if n_validation is None:
        n_validation = max(n_classes, int(round(VALIDATION_FRACTION * n_train / n_classes)) * n_classes)
    splits = {}
    for split, targets in ((Split.TRAIN, _targets(task, n_train_per_class, True)),
                           (Split.VALIDATION, _targets(task, n_validation, False)),
                           (Split.TEST, _targets(task, n_test, False))):
        examples = []
        for i, target in enumerate(targets):
            inputs, answer, meta = synthesize_inputs(task, target, seed, split.value, i, use_ecg=use_ecg)
            examples.append(make_example(task, inputs, answer, split, f"{task.value}-{split.value}-{i:04d}",
                                         seed, meta))
        splits[split] = examples
    return TaskDataset(task, seed, splits[Split.TRAIN], splits[Split.VALIDATION], splits[Split.TEST])


# ------------------------------------------------------------------- shots

@dataclass(frozen=True)
class ShotPlan:
    shots: int
    seed: int = 0

    def __post_init__(self):
        if self.shots < 0:
            raise ValueError("shots must be non-negative")


def sample_shots(train_pool: list, plan: ShotPlan) -> list:
    """Few-shot subset of a training pool.

    Classification: ``plan.shots`` per class; regression: ``plan.shots`` in
    total. Each class is permuted once per seed and a prefix taken, so smaller
    shot sets are subsets of larger ones.
    """
    if not train_pool:
        raise InsufficientPool("empty training pool")
    task = train_pool[0].task
    rng = make_rng(plan.seed, "shots", task.value)
    if TASKS[task].kind != "classification":
        if plan.shots > len(train_pool):
            raise InsufficientPool(f"{plan.shots} shots requested from a pool of {len(train_pool)}")
        order = rng.permutation(len(train_pool))
        return [train_pool[i] for i in order[: plan.shots]]
    chosen = []
    per_class = []
    for cls in TASKS[task].classes:
        members = [ex for ex in train_pool if ex.label == cls]
        if plan.shots > len(members):
            raise InsufficientPool(f"{plan.shots} shots of {cls!r} requested, pool has {len(members)}")
        order = rng.permutation(len(members))
        per_class.append([members[i] for i in order[: plan.shots]])
    for group in zip(*per_class):
        chosen.extend(group)
    return chosen


# ------------------------------------------------------------ ICL prompts

@dataclass(frozen=True)
class TruncationFailure:
    n_tokens: int
    max_tokens: int

    def __str__(self):
        return f"prompt needs {self.n_tokens} tokens, limit is {self.max_tokens}"


def qa_block(prompt: str, answer: str | None = None) -> str:
    if answer is None:
        return f"Question: {prompt} Answer: "
    return f"Question: {prompt} Answer: {answer}"


def build_icl_prompt(exemplars: list, query: TaskExample, max_tokens: int,
                     variant=Variant.CONTEXT_INCLUSIVE, tokenizer=None):
    """Question/Answer exemplar blocks followed by the open query block.

    Returns the prompt text, or a :class:`TruncationFailure` when its token
    count (including the leading BOS) exceeds ``max_tokens``.
    """
    from .lm.tokenizer import CharTokenizer

    for ex in exemplars:
        if ex.split is not Split.TRAIN:
            raise DataError(f"exemplar {ex.example_id} is not from the train split")
    tokenizer = tokenizer or CharTokenizer()
    blocks = [qa_block(ex.prompt(variant), ex.answer_text) for ex in exemplars]
    blocks.append(qa_block(query.prompt(variant)))
    text = "\n".join(blocks)
    n_tokens = len(tokenizer.encode(text, bos=True))
    if n_tokens > max_tokens:
        return TruncationFailure(n_tokens, max_tokens)
    return text


# ------------------------------------------------------------------- JSONL

JSONL_FIELDS = ("task", "split", "variant", "prompt", "input_values", "answer_text",
                "answer_value", "example_id", "seed")


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def example_records(example: TaskExample) -> list[OrderedDict]:
    rows = []
    for variant in Variant:
        if not supports_variant(example.task, variant):
            continue
        rows.append(OrderedDict([
            ("task", example.task.value), ("split", example.split.value), ("variant", variant.value),
            ("prompt", example.prompt(variant)), ("input_values", _plain(example.input_values)),
            ("answer_text", example.answer_text), ("answer_value", _plain(example.answer_value)),
            ("example_id", example.example_id), ("seed", example.seed)]))
    return rows


def dumps_jsonl(examples) -> str:
    lines = []
    for ex in examples:
        for row in example_records(ex):
            lines.append(json.dumps(row, ensure_ascii=False, allow_nan=False))
    return "".join(line + "\n" for line in lines)


def write_task_jsonl(path, examples) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_jsonl(examples))
    return path


def read_task_jsonl(path) -> list[TaskExample]:
    by_id: OrderedDict[str, TaskExample] = OrderedDict()
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            if tuple(row) != JSONL_FIELDS:
                raise DataError(f"{path}: line {line_no}: unexpected fields {list(row)}")
            ex = by_id.get(row["example_id"])
            if ex is None:
                task = TaskId(row["task"])
                answer = row["answer_value"]
                ex = TaskExample(task, "", None, row["input_values"], row["answer_text"],
                                 float(answer) if isinstance(answer, (int, float)) else answer,
                                 Split(row["split"]), row["example_id"], row["seed"])
                by_id[row["example_id"]] = ex
            if Variant(row["variant"]) is Variant.NUMERICAL_ONLY:
                ex.prompt_numeric = row["prompt"]
            else:
                ex.prompt_context = row["prompt"]
    return list(by_id.values())


def dataset_from_examples(examples: list[TaskExample], seed: int = 0) -> TaskDataset:
    if not examples:
        raise DataError("no examples")
    task = examples[0].task
    pick = lambda s: [e for e in examples if e.split is s]  # noqa: E731
    return TaskDataset(task, seed, pick(Split.TRAIN), pick(Split.VALIDATION), pick(Split.TEST))


def is_close_answer(task, parsed: float, value: float) -> bool:
    return math.isclose(parsed, value, abs_tol=answer_tolerance(task))
