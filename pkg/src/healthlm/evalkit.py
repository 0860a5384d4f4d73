"""Answer parsing, metrics, improvement columns and comparison tables."""
from __future__ import annotations

import enum
import json
import math
import re
import statistics
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import DataError, EmptySeries, LengthMismatch, MixedDatasets, NoRunsFound, ZeroReference
from .tasks import TASKS, TaskId

REPORT_SCHEMA_VERSION = 1
_NUMBER = re.compile(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)")

# surface forms accepted per class label, lower-cased
_SURFACE = {
    "Walking": ("walking",),
    "Running": ("running",),
    "Stressed": ("stressed",),
    "Not Stressed": ("not stressed",),
}


class AnswerKind(str, enum.Enum):
    NUMBER = "Number"
    CLASS_LABEL = "ClassLabel"
    PARSE_FAILURE = "ParseFailure"


class Direction(str, enum.Enum):
    HIGHER_BETTER = "HigherBetter"
    LOWER_BETTER = "LowerBetter"


@dataclass(frozen=True)
class ParsedAnswer:
    kind: AnswerKind
    number: float | None = None
    label: str | None = None
    raw_text: str = ""

    @property
    def failed(self) -> bool:
        return self.kind is AnswerKind.PARSE_FAILURE


def _class_matches(text: str, classes) -> list[tuple[int, int, str]]:
    low = text.lower()
    spans = []
    for cls in classes:
        for form in _SURFACE.get(cls, (cls.lower(),)):
            for m in re.finditer(re.escape(form), low):
                spans.append((m.start(), m.end(), cls))
    # a match nested inside a longer one ("stressed" in "not stressed") does not count
    return [s for s in spans
            if not any(o[0] <= s[0] and s[1] <= o[1] and (o[1] - o[0]) > (s[1] - s[0]) for o in spans)]


def parse_answer(text, task) -> ParsedAnswer:
    """Decode generated text into a number or a class label.

    Classification: case-insensitive search for the task's class names; if
    two different classes appear the answer is a parse failure. Regression
    (and the PHQ score): the first decimal number. Never raises.
    """
    text = "" if text is None else str(text)
    try:
        task = TaskId(task)
    except ValueError:
        return ParsedAnswer(AnswerKind.PARSE_FAILURE, raw_text=text)
    info = TASKS[task]
    if info.kind == "classification" and task is not TaskId.PHQ_SCORE:
        found = _class_matches(text, info.classes)
        labels = {cls for _, _, cls in found}
        if len(labels) != 1:
            return ParsedAnswer(AnswerKind.PARSE_FAILURE, raw_text=text)
        return ParsedAnswer(AnswerKind.CLASS_LABEL, label=labels.pop(), raw_text=text)
    m = _NUMBER.search(text)
    if m is None:
        return ParsedAnswer(AnswerKind.PARSE_FAILURE, raw_text=text)
    try:
        value = float(m.group(0))
    except ValueError:
        return ParsedAnswer(AnswerKind.PARSE_FAILURE, raw_text=text)
    return ParsedAnswer(AnswerKind.NUMBER, number=value, raw_text=text)


# ---------------------------------------------------------------- metrics

def mae(predictions, targets) -> float:
    predictions, targets = list(predictions), list(targets)
    if len(predictions) != len(targets):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(targets)} targets")
    if not predictions:
        raise EmptySeries("mae of an empty sequence")
    return sum(abs(float(p) - float(t)) for p, t in zip(predictions, targets)) / len(predictions)


@dataclass(frozen=True)
class Counts:
    correct: int
    wrong: int
    failed: int

    @property
    def n(self) -> int:
        return self.correct + self.wrong + self.failed

    def percentages(self) -> tuple[Fraction, Fraction, Fraction]:
        """(accuracy, error, failure) as exact percentages summing to 100."""
        return tuple(Fraction(100 * c, self.n) for c in (self.correct, self.wrong, self.failed))


def accuracy_counts(predictions, targets) -> Counts:
    """``None`` (or a failed :class:`ParsedAnswer`) in ``predictions`` is a failure."""
    predictions, targets = list(predictions), list(targets)
    if len(predictions) != len(targets):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(targets)} targets")
    if not predictions:
        raise EmptySeries("accuracy of an empty sequence")
    correct = wrong = failed = 0
    for p, t in zip(predictions, targets):
        if isinstance(p, ParsedAnswer):
            p = None if p.failed else (p.label if p.label is not None else p.number)
        if p is None:
            failed += 1
        elif p == t:
            correct += 1
        else:
            wrong += 1
    return Counts(correct, wrong, failed)


def accuracy(predictions, targets) -> tuple[float, float]:
    """(accuracy %, failure rate %); failures count as incorrect."""
    acc, _, fail = accuracy_counts(predictions, targets).percentages()
    return float(acc), float(fail)


def pct_improvement(reference: float, candidate: float, direction=Direction.HIGHER_BETTER) -> float:
    if not reference > 0:
        raise ZeroReference(f"reference must be positive, got {reference}")
    delta = (candidate - reference) if Direction(direction) is Direction.HIGHER_BETTER else (reference - candidate)
    return delta / reference * 100.0


# ---------------------------------------------------------------- reports

REGIMES = ("zero-shot", "prompt-engineering", "prompt-tuning", "supervised")


@dataclass(frozen=True)
class RunSummary:
    """One scored run: the unit the report tables aggregate."""
    task: str
    regime: str
    variant: str
    shots: int
    seed: int
    metric_name: str
    metric_value: float
    failure_rate: float = 0.0
    n: int = 0
    dataset_hash: str = ""
    manifest_hash: str = ""

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise DataError(f"unknown regime {self.regime!r}")
        if self.n <= 0:
            raise DataError("a run summary needs n > 0")


def metric_direction(metric_name: str) -> Direction:
    return Direction.LOWER_BETTER if metric_name.lower().startswith("mae") else Direction.HIGHER_BETTER


@dataclass
class EvalReport:
    rows: list  # seed-median rows as dicts
    tables: dict  # name -> list of table rows
    dataset_hash: str
    manifest_hashes: list = field(default_factory=list)

    def to_json(self) -> str:
        payload = OrderedDict([("schema_version", REPORT_SCHEMA_VERSION), ("dataset_hash", self.dataset_hash),
                               ("manifest_hashes", self.manifest_hashes), ("rows", self.rows),
                               ("tables", self.tables)])
        return json.dumps(_finite(payload), indent=2, sort_keys=False, allow_nan=False) + "\n"

    def to_text(self) -> str:
        return render_text(self)

    def write(self, directory) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        txt, js = directory / "report.txt", directory / "report.json"
        txt.write_text(self.to_text(), encoding="utf-8")
        js.write_text(self.to_json(), encoding="utf-8")
        return txt, js


def _finite(obj):
    """NaN (an MAE with no parsable answers) becomes null in JSON."""
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return type(obj)((k, _finite(v)) for k, v in obj.items())
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


def _median_rows(runs: list[RunSummary]) -> list[dict]:
    groups: OrderedDict = OrderedDict()
    for r in sorted(runs, key=lambda r: (list(TaskId).index(TaskId(r.task)), REGIMES.index(r.regime),
                                         r.variant, r.shots, r.seed)):
        groups.setdefault((r.task, r.regime, r.variant, r.shots, r.metric_name), []).append(r)
    rows = []
    for (task, regime, variant, shots, metric), group in groups.items():
        rows.append(OrderedDict([
            ("task", task), ("regime", regime), ("variant", variant), ("shots", shots),
            ("metric_name", metric),
            ("metric_value", statistics.median(r.metric_value for r in group)),
            ("failure_rate", statistics.median(r.failure_rate for r in group)),
            ("n", group[0].n), ("seeds", [r.seed for r in group]),
            ("manifests", sorted({r.manifest_hash for r in group}))]))
    return rows


def _lookup(rows, task, regime, variant, shots):
    for r in rows:
        if (r["task"], r["regime"], r["variant"], r["shots"]) == (task, regime, variant, shots):
            return r
    return None


def _improve(ref, cand):
    if ref is None or cand is None:
        return None
    try:
        return pct_improvement(ref["metric_value"], cand["metric_value"], metric_direction(ref["metric_name"]))
    except ZeroReference:
        return None


def _value(row):
    return None if row is None else row["metric_value"]


def _comparison_tables(rows: list[dict]) -> dict:
    tasks = [t.value for t in TaskId if any(r["task"] == t.value for r in rows)]
    tables = OrderedDict()
    sup, tuned, ctx, num = "supervised", "prompt-tuning", "context", "numerical"

    t2 = []
    for task in tasks:
        s = {k: _lookup(rows, task, sup, ctx, k) or _lookup(rows, task, sup, num, k) for k in (3, 10, 25)}
        p = {k: _lookup(rows, task, tuned, ctx, k) for k in (3, 10, 25)}
        if not any(p.values()) and not any(s.values()):
            continue
        metric = next(r for r in list(s.values()) + list(p.values()) if r)["metric_name"]
        t2.append(OrderedDict([("task", task), ("metric", metric)]
                              + [(f"supervised_{k}", _value(s[k])) for k in (3, 10, 25)]
                              + [(f"tuned_{k}", _value(p[k])) for k in (3, 10, 25)]
                              + [("improvement", _improve(s[25], p[25]))]))
    tables["tuned_vs_supervised"] = t2

    t3 = []
    for task in tasks:
        if not TASKS[TaskId(task)].numeric_variant:
            continue
        shots = sorted({r["shots"] for r in rows if r["task"] == task and r["regime"] == tuned
                        and r["variant"] == num})
        for k in shots:
            n_row, c_row = _lookup(rows, task, tuned, num, k), _lookup(rows, task, tuned, ctx, k)
            t3.append(OrderedDict([("task", task), ("metric", n_row["metric_name"]), ("shots", k),
                                   ("numerical", _value(n_row)), ("context", _value(c_row)),
                                   ("improvement", _improve(n_row, c_row))]))
    tables["context_vs_numerical"] = t3

    for name, regime in (("tuned_vs_zero_shot", "zero-shot"), ("tuned_vs_icl", "prompt-engineering")):
        rows_out = []
        for task in tasks:
            shots = 0 if regime == "zero-shot" else 3
            ref = _lookup(rows, task, regime, ctx, shots)
            cand = _lookup(rows, task, tuned, ctx, 3)
            if ref is None and cand is None:
                continue
            metric = (ref or cand)["metric_name"]
            rows_out.append(OrderedDict([("task", task), ("metric", metric),
                                         ("reference", _value(ref)), ("tuned_3", _value(cand)),
                                         ("reference_failure_rate", None if ref is None else ref["failure_rate"]),
                                         ("improvement", _improve(ref, cand))]))
        tables[name] = rows_out
    return tables


def build_report(runs, reference_policy: str = "standard") -> EvalReport:
    """Seed-median rows plus the four comparison tables.

    ``reference_policy="standard"`` uses the supervised baseline, the
    numerical-only prompt, zero-shot, and 3-shot prompt engineering as the
    references of the respective tables.
    """
    runs = list(runs)
    if not runs:
        raise NoRunsFound("no runs to report")
    if reference_policy != "standard":
        raise DataError(f"unknown reference policy {reference_policy!r}")
    hashes = {r.dataset_hash for r in runs}
    if len(hashes) > 1:
        raise MixedDatasets(f"runs come from {len(hashes)} different datasets")
    rows = _median_rows(runs)
    return EvalReport(rows, _comparison_tables(rows), hashes.pop(),
                      sorted({r.manifest_hash for r in runs}))


def _fmt(v, pct=False) -> str:
    if v is None:
        return "-"
    if pct:
        return f"{v:+.1f}%"
    return f"{v:.2f}" if abs(v) < 10 else f"{v:.1f}"


def _render_table(title: str, header: list[str], body: list[list[str]]) -> list[str]:
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(header)]
    line = lambda cells: "  ".join(c.ljust(w) if i < 2 else c.rjust(w)  # noqa: E731
                                   for i, (c, w) in enumerate(zip(cells, widths))).rstrip()
    return [title, line(header), line(["-" * w for w in widths])] + [line(r) for r in body] + [""]


def render_text(report: EvalReport) -> str:
    out = [f"dataset {report.dataset_hash}", ""]
    body = [[r["task"], r["regime"], r["variant"], str(r["shots"]), r["metric_name"], _fmt(r["metric_value"]),
             f"{r['failure_rate']:.1f}", str(r["n"])] for r in report.rows]
    out += _render_table("Runs (median over seeds)",
                         ["task", "regime", "variant", "shots", "metric", "value", "fail%", "n"], body)
    t = report.tables
    out += _render_table(
        "Prompt tuning vs supervised baseline",
        ["task", "metric", "sup3", "sup10", "sup25", "pt3", "pt10", "pt25", "improvement"],
        [[r["task"], r["metric"]] + [_fmt(r[k]) for k in ("supervised_3", "supervised_10", "supervised_25",
                                                           "tuned_3", "tuned_10", "tuned_25")]
         + [_fmt(r["improvement"], True)] for r in t["tuned_vs_supervised"]])
    out += _render_table(
        "Numerical-only vs context-inclusive prompts (prompt tuning)",
        ["task", "metric", "shots", "numerical", "context", "improvement"],
        [[r["task"], r["metric"], str(r["shots"]), _fmt(r["numerical"]), _fmt(r["context"]),
          _fmt(r["improvement"], True)] for r in t["context_vs_numerical"]])
    for key, title, ref in (("tuned_vs_zero_shot", "Zero-shot vs prompt tuning (3-shot)", "zero-shot"),
                            ("tuned_vs_icl", "Prompt engineering (3-shot) vs prompt tuning (3-shot)", "icl")):
        out += _render_table(
            title, ["task", "metric", ref, "ref fail%", "pt3", "improvement"],
            [[r["task"], r["metric"], _fmt(r["reference"]),
              "-" if r["reference_failure_rate"] is None else f"{r['reference_failure_rate']:.1f}",
              _fmt(r["tuned_3"]), _fmt(r["improvement"], True)] for r in t[key]])
    return "\n".join(out)


# -------------------------------------------------------------- fixtures

def load_fixture(path) -> list[RunSummary]:
    """Externally supplied metric values, as a JSON list of run summaries."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    runs = data["runs"] if isinstance(data, dict) else data
    return [RunSummary(**{**r, "n": r.get("n", 100)}) for r in runs]


def summary_to_dict(run: RunSummary) -> dict:
    return asdict(run)
