"""Synthetic numeric-text pretraining corpus.

Three document families:

* number sentences ("The number 347 has 3 digits.", "17 plus 25 equals 42.")
* arithmetic statements ("mean of 412,388,905 is 568.3")
* task-style question/answer documents built from the task generators with
  widened parameter ranges.

Task documents come from two sources. *Curated* documents begin with a
one-character source marker for their domain, followed by BOS, and carry
correct answers. *Uncurated* documents begin directly with BOS and carry a
boilerplate answer that ignores the input (a fixed default class or value per
task). A plain BOS query therefore elicits the uncurated behaviour, while a
prefix that plays the role of the marker elicits the curated one; this is the
latent capability a tuned soft prompt can unlock and an untuned query cannot.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import tasks as T
from ..errors import InvalidSpec
from ..rng import make_rng
from .tokenizer import BOS, EOS, CharTokenizer

DOMAIN_MARKERS = {"cardio": "~", "activity": "^", "metabolic": "|", "mhealth": "`"}

NUMBER_WORDS = ("zero one two three four five six seven eight nine ten eleven twelve thirteen "
                "fourteen fifteen sixteen seventeen eighteen nineteen twenty").split()


@dataclass(frozen=True)
class CorpusSpec:
    n_chars: int = 2_000_000
    seed: int = 0
    context_len: int = 512
    sentence_weight: float = 0.05
    arithmetic_weight: float = 0.10
    curated_fraction: float = 0.5
    holdout_fraction: float = 0.05
    task_weights: dict = field(default_factory=lambda: {t.value: 1.0 for t in T.TaskId})

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Corpus:
    spec: CorpusSpec
    train: list  # token id lists
    heldout: list

    @property
    def n_tokens(self) -> int:
        return sum(len(d) for d in self.train) + sum(len(d) for d in self.heldout)

    def digest(self) -> str:
        h = hashlib.sha256()
        for doc in self.train + self.heldout:
            h.update(np.asarray(doc, dtype=np.uint8).tobytes())
            h.update(b"\xff")
        return h.hexdigest()


def _sentence(rng) -> str:
    kind = int(rng.integers(5))
    a, b = int(rng.integers(0, 1000)), int(rng.integers(0, 1000))
    if kind == 0:
        return f"The number {a} has {len(str(a))} digits."
    if kind == 1:
        return f"{a} plus {b} equals {a + b}."
    if kind == 2:
        return f"{a} is {'greater than' if a > b else 'less than' if a < b else 'equal to'} {b}."
    if kind == 3:
        n = int(rng.integers(len(NUMBER_WORDS)))
        return f"{NUMBER_WORDS[n].capitalize()} is written as {n}."
    return f"{a} minus {b} equals {a - b}."


def _arithmetic(rng) -> str:
    kind = int(rng.integers(4))
    n = int(rng.integers(2, 9))
    if kind == 0:
        xs = rng.integers(300, 1500, n)
        return f"mean of {','.join(map(str, xs))} is {T.format_number(xs.mean(), 1)}"
    if kind == 1:
        xs = rng.integers(40, 180, n)
        return f"average of {','.join(map(str, xs))} is {T.format_number(xs.mean(), 1)}"
    if kind == 2:
        ibi = int(rng.integers(300, 1500))
        return f"60000 divided by {ibi} is {T.format_number(60000 / ibi, 1)}"
    a, b = int(rng.integers(2, 300)), int(rng.integers(2, 300))
    return f"{a} times {b} is {a * b}"


BOILERPLATE_ANSWERS = {
    T.TaskId.AVG_HR: 75.0,
    T.TaskId.IBI_TO_HR: 75.0,
    T.TaskId.IBI_TO_AFIB: "Normal Sinus",
    T.TaskId.IBI_TO_BRADY: "Normal Sinus",
    T.TaskId.IBI_TO_TACHY: "Normal Sinus",
    T.TaskId.ACTIVITY_REC: "Walking",
    T.TaskId.CALORIES: 100.0,
    T.TaskId.STRESS_EMA: "Not Stressed",
    T.TaskId.PHQ_SCORE: 10.0,
}


def _task_block(task: T.TaskId, curated: bool, seed: int, doc: int, j: int, rng) -> str:
    info = T.TASKS[task]
    target = None
    if info.kind == "classification":
        target = info.classes[int(rng.integers(len(info.classes)))]
        if task is T.TaskId.PHQ_SCORE:
            target = None
    inputs, answer, _ = T.synthesize_inputs(task, target, seed, "corpus", doc, j, broad=True, use_ecg=False)
    if not curated:
        answer = BOILERPLATE_ANSWERS[task]
    return T.qa_block(T.render_prompt(task, inputs), T.answer_text_for(task, answer))


def build_corpus(spec: CorpusSpec) -> Corpus:
    """Deterministic document list whose total size is about ``spec.n_chars``."""
    tok = CharTokenizer()
    rng = make_rng(spec.seed, "corpus")
    task_ids = [T.TaskId(k) for k in spec.task_weights]
    tw = np.asarray([spec.task_weights[t.value] for t in task_ids], dtype=float)
    family_w = np.asarray([spec.sentence_weight, spec.arithmetic_weight,
                           1.0 - spec.sentence_weight - spec.arithmetic_weight])
    limit = spec.context_len - 2  # room for marker and EOS
    docs, total, d, empty = [], 0, 0, 0
    while total < spec.n_chars:
        family = int(rng.choice(3, p=family_w / family_w.sum()))
        prefix: list[int] = []
        if family == 2:
            task = task_ids[int(rng.choice(len(task_ids), p=tw / tw.sum()))]
            curated = bool(rng.random() < spec.curated_fraction)
            if curated:
                prefix = [tok.token_id(DOMAIN_MARKERS[T.TASKS[task].domain])]
            make = lambda j: _task_block(task, curated, spec.seed, d, j, rng)  # noqa: E731
        else:
            make = (lambda j: _sentence(rng)) if family == 0 else (lambda j: _arithmetic(rng))  # noqa: E731
        body = [BOS]
        for j in range(64):
            block = tok.encode(("\n" if j else "") + make(j))
            if len(prefix) + len(body) + len(block) > limit:
                break
            body += block
        if len(body) == 1:
            d, empty = d + 1, empty + 1
            if empty > 1000:
                raise InvalidSpec(f"context_len {spec.context_len} is too short for corpus documents")
            continue
        empty = 0
        doc = prefix + body + [EOS]
        docs.append(doc)
        total += len(doc)
        d += 1
    order = make_rng(spec.seed, "corpus-split").permutation(len(docs))
    n_hold = max(1, int(round(spec.holdout_fraction * len(docs))))
    held = sorted(order[:n_hold].tolist())
    held_set = set(held)
    return Corpus(spec, [docs[i] for i in range(len(docs)) if i not in held_set], [docs[i] for i in held])


def unigram_loss(corpus: Corpus, vocab_size: int) -> float:
    """Held-out cross-entropy (nats/token) of an add-one unigram model fit on
    the training documents, over the same target positions the LM predicts."""
    counts = np.ones(vocab_size)
    for doc in corpus.train:
        np.add.at(counts, np.asarray(doc[1:]), 1)
    logp = np.log(counts / counts.sum())
    targets = np.concatenate([np.asarray(doc[1:]) for doc in corpus.heldout])
    return float(-logp[targets].mean())


_ANSWER_CUE = CharTokenizer().encode(" Answer: ")
_NEWLINE = CharTokenizer().token_id("\n")


def answer_positions(doc: list[int]) -> np.ndarray:
    """Boolean mask over next-token targets ``doc[1:]`` marking answer tokens
    (everything after an ``Answer: `` cue up to and including the newline or
    EOS that closes it)."""
    mask = np.zeros(len(doc) - 1, dtype=bool)
    n, k, i = len(doc), len(_ANSWER_CUE), 0
    while i <= n - k:
        if doc[i:i + k] == _ANSWER_CUE:
            j = i + k
            while j < n:
                mask[j - 1] = True
                if doc[j] in (_NEWLINE, EOS):
                    break
                j += 1
            i = j
        else:
            i += 1
    return mask
