"""Command-line front end.

Stages (each reads the previous stage's artifacts from the work directory)::

    synth           raw generator records as CSV plus a metadata sidecar
    build-tasks     task JSONL datasets
    pretrain        toy backbone checkpoint
    run             zero-shot / prompt-engineering / prompt-tuning runs
    train-baseline  supervised MLP runs
    report          seed-median tables
    selftest        formula, signal and gradient oracles

Logs go to stderr; data goes to files under the work directory only.
"""
from __future__ import annotations

import argparse
import concurrent.futures as cf
import hashlib
import json
import logging
import sys
from collections import OrderedDict
from dataclasses import replace
from pathlib import Path

from . import evalkit, io, synth
from .config import HarnessConfig, dump_config, load_config, toy_config
from .errors import ConfigError, HarnessError, IoError, MissingArtifact, MissingCheckpoint, MixedConfigs, NoRunsFound
from .tasks import (ACTIVITY_SECONDS, TASKS, ShotPlan, Split, TaskId, Variant, build_task_dataset,
                    dataset_from_examples, read_task_jsonl, supports_variant, write_task_jsonl)

log = logging.getLogger("healthlm")

MODEL_FILE = "tinylm.ckpt"


# ---------------------------------------------------------------- helpers

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, payload) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, default=str) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}") from None
    return path


def _ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {path}: {exc.strerror}") from None
    if not path.is_dir() or not _writable(path):
        raise IoError(f"directory is not writable: {path}")
    return path


def _writable(path: Path) -> bool:
    probe = path / ".write-probe"
    try:
        probe.write_bytes(b"")
        probe.unlink()
        return True
    except OSError:
        return False


def _tasks(cfg: HarnessConfig) -> list[TaskId]:
    return [TaskId(t) for t in cfg.tasks]


# ------------------------------------------------------------------ synth

def _raw_rows(task: TaskId, ex) -> dict:
    x = ex.input_values
    row = OrderedDict([("example_id", ex.example_id)])
    row.update((k, v) for k, v in x.items())
    row["answer"] = ex.answer_value
    return row


def cmd_synth(cfg: HarnessConfig, args) -> int:
    """Per example: interval CSVs (cardio), triaxial accelerometer CSVs
    (activity); per split: record tables (calories, wearable days, PHQ)."""
    out = _ensure_dir(cfg.work_path / "synth")
    files = []
    for task in _tasks(cfg):
        ds = _dataset(cfg, task)
        tdir = _ensure_dir(out / task.value)
        for split in Split:
            examples = ds.split(split)
            if not examples:
                continue
            if TASKS[task].domain == "cardio":
                for ex in examples:
                    ibis = ex.meta.get("ibis", ex.input_values)
                    files.append(io.write_ibi_csv(tdir / f"{ex.example_id}.ibi.csv", ibis))
            elif task is TaskId.ACTIVITY_REC:
                for i, ex in enumerate(examples):
                    ax, ay, az, _ = synth.gen_accel_raw(str(ex.answer_value).lower(), ACTIVITY_SECONDS, cfg.seed,
                                                        task.value, split.value, i)
                    files.append(io.write_accel_csv(tdir / f"{ex.example_id}.accel.csv", ax, ay, az, 100))
            else:
                files.append(io.write_records_csv(tdir / f"{split.value}.csv",
                                                  [_raw_rows(task, ex) for ex in examples]))
    meta = OrderedDict([("config_hash", cfg.config_hash()), ("seed", cfg.seed),
                        ("generator", synth.spec_metadata()),
                        ("files", OrderedDict((str(Path(f).relative_to(out)), _sha256(f)) for f in files))])
    _write_json(out / "metadata.json", meta)
    log.info("synth: wrote %d files to %s", len(files), out)
    return 0


# ------------------------------------------------------------ build-tasks

def _dataset(cfg: HarnessConfig, task: TaskId):
    d = cfg.data
    return build_task_dataset(task, d.n_train_per_class, d.n_test, cfg.seed, use_ecg=d.use_ecg)


def cmd_build_tasks(cfg: HarnessConfig, args) -> int:
    out = _ensure_dir(cfg.work_path / "tasks")
    files = OrderedDict()
    for task in _tasks(cfg):
        ds = _dataset(cfg, task)
        path = write_task_jsonl(out / f"{task.value}.jsonl", ds.all_examples())
        files[path.name] = _sha256(path)
        log.info("build-tasks: %s train=%d validation=%d test=%d", task.value, len(ds.train),
                 len(ds.validation), len(ds.test))
    _write_json(out / "manifest.json", OrderedDict([("config_hash", cfg.config_hash()), ("files", files),
                                                    ("dataset_hash", _dataset_hash(files))]))
    return 0


def _dataset_hash(files: dict) -> str:
    return hashlib.sha256(json.dumps(files, sort_keys=True).encode()).hexdigest()[:16]


def _load_tasks(cfg: HarnessConfig) -> tuple[dict, str]:
    tdir = cfg.work_path / "tasks"
    manifest_path = tdir / "manifest.json"
    if not manifest_path.exists():
        raise MissingArtifact(f"no task datasets in {tdir}; run build-tasks first")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    _check_hash(manifest, cfg, manifest_path)
    datasets = {}
    for task in _tasks(cfg):
        path = tdir / f"{task.value}.jsonl"
        if path.name not in manifest["files"]:
            raise MissingArtifact(f"task dataset {path} was not built")
        datasets[task] = dataset_from_examples(read_task_jsonl(path), cfg.seed)
    return datasets, manifest["dataset_hash"]


def _check_hash(meta: dict, cfg: HarnessConfig, where):
    if meta.get("config_hash") != cfg.config_hash():
        raise MixedConfigs(f"{where} was produced with config {meta.get('config_hash')}, "
                           f"current config is {cfg.config_hash()}")


# --------------------------------------------------------------- pretrain

def cmd_pretrain(cfg: HarnessConfig, args) -> int:
    import torch

    from .checkpoint import save_model
    from .lm.corpus import CorpusSpec, build_corpus, unigram_loss
    from .lm.train import pretrain

    torch.set_num_threads(cfg.jobs)
    spec = CorpusSpec(n_chars=cfg.corpus.n_chars, seed=cfg.seed, context_len=cfg.lm.context_len,
                      curated_fraction=cfg.corpus.curated_fraction,
                      task_weights=cfg.corpus.weights())
    corpus = build_corpus(spec)
    log.info("pretrain: corpus %s, %d documents, %d tokens", corpus.digest(), len(corpus.train), corpus.n_tokens)
    result = pretrain(corpus, cfg.lm, cfg.seed, cfg.pretrain)
    unigram = unigram_loss(corpus, cfg.lm.vocab_size)
    tail = result.losses[-50:] or [float("nan")]
    head = result.losses[:50] or [float("nan")]
    meta = {"config_hash": cfg.config_hash(), "initial_loss": result.initial_loss,
            "heldout_loss": result.heldout_loss, "unigram_heldout_loss": unigram,
            "train_loss_first50": sum(head) / len(head), "train_loss_last50": sum(tail) / len(tail),
            "pretrain": cfg.pretrain.to_dict()}
    path = save_model(_ensure_dir(cfg.checkpoint_path) / MODEL_FILE, result.model, cfg.seed, corpus.digest(), meta)
    log.info("pretrain: held-out %.4f nats/token (unigram %.4f); wrote %s", result.heldout_loss, unigram, path)
    return 0


def _load_backbone(cfg: HarnessConfig):
    from .checkpoint import load_model

    path = cfg.checkpoint_path / MODEL_FILE
    if not path.exists():
        raise MissingCheckpoint(f"backbone checkpoint not found: {path}; run pretrain first")
    model, header = load_model(path)
    _check_hash(header["meta"], cfg, path)
    return model


# -------------------------------------------------------------------- run

def _variants_for(cfg: HarnessConfig, args, variant: Variant) -> list[TaskId]:
    chosen = []
    for task in _tasks(cfg):
        if supports_variant(task, variant):
            chosen.append(task)
        elif args.task:
            from .errors import VariantUnsupported
            raise VariantUnsupported(f"{task.value} has no {variant.value} rendering")
        else:
            log.info("run: skipping %s, no %s rendering", task.value, variant.value)
    return chosen


def _run_units(cfg: HarnessConfig, args) -> list[tuple]:
    from .grounding import Regime

    regime, variant = Regime(args.regime), Variant(args.variant)
    shots = (0,) if regime is Regime.ZERO_SHOT else cfg.shots
    return [(task.value, regime.value, variant.value, k, s)
            for task in _variants_for(cfg, args, variant) for k in shots for s in cfg.run_seeds]


def _do_run(cfg: HarnessConfig, unit: tuple, model=None, datasets=None, dataset_hash=""):
    from .checkpoint import save_soft_prompt
    from .grounding import Regime, RunSpec, run, write_run

    task, regime, variant, shots, seed = unit
    if model is None:
        model = _load_backbone(cfg)
        datasets, dataset_hash = _load_tasks(replace(cfg, tasks=(task,)))
    regime = Regime(regime)
    spec = RunSpec(TaskId(task), regime, Variant(variant),
                   None if regime is Regime.ZERO_SHOT else ShotPlan(shots, seed),
                   replace(cfg.tune, seed=seed) if regime is Regime.PROMPT_TUNING else None, seed)
    prompt, output = run(model, datasets[TaskId(task)], spec)
    output.metadata["effective_config"] = cfg.effective()
    write_run(cfg.work_path / "runs", output, cfg.config_hash(), dataset_hash)
    if prompt is not None:
        save_soft_prompt(cfg.checkpoint_path / "prompts" / f"{spec.key()}.ckpt", prompt,
                         {"config_hash": cfg.config_hash(), "spec": spec.to_dict(),
                          "best_step": output.metadata.get("best_step")})
    score = output.score()
    return spec.key(), score


def _worker(args):
    import torch

    torch.set_num_threads(1)
    cfg, unit = args
    return _do_run(cfg, unit)


def cmd_run(cfg: HarnessConfig, args) -> int:
    import torch

    units = _run_units(cfg, args)
    model = _load_backbone(cfg)
    datasets, dataset_hash = _load_tasks(cfg)
    _ensure_dir(cfg.work_path / "runs")
    if cfg.jobs > 1 and len(units) > 1:
        with cf.ProcessPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(_worker, [(cfg, u) for u in units]))
    else:
        torch.set_num_threads(1)
        results = [_do_run(cfg, u, model, datasets, dataset_hash) for u in units]
    for key, score in results:
        log.info("run: %s %s=%.3f failures=%.1f%%", key, score["metric_name"], score["metric_value"],
                 score["failure_rate"])
    return 0


# ---------------------------------------------------------------- baseline

def _baseline_run(cfg: HarnessConfig, dataset, task: TaskId, shots: int, seed: int, dataset_hash: str):
    from .baseline import evaluate_mlp, train_mlp
    from .checkpoint import save_baseline
    from .tasks import sample_shots

    chosen = sample_shots(dataset.train, ShotPlan(shots, seed))
    trained = train_mlp(chosen, replace(cfg.mlp, seed=seed))
    records, score = evaluate_mlp(trained, dataset.test)
    key = f"{task.value}__supervised__numerical__{shots}shot__seed{seed}"
    out = cfg.work_path / "runs"
    (out / f"{key}.jsonl").write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    ckpt = save_baseline(cfg.work_path / "baselines" / f"{key}.ckpt", trained, {"config_hash": cfg.config_hash()})
    manifest = OrderedDict([
        ("config_hash", cfg.config_hash()), ("dataset_hash", dataset_hash),
        ("records_sha256", _sha256(out / f"{key}.jsonl")), ("score", score),
        ("spec", OrderedDict([("task", task.value), ("regime", "supervised"), ("variant", "numerical"),
                              ("shots", shots), ("shot_seed", seed), ("seed", seed)])),
        ("shot_ids", [e.example_id for e in chosen]), ("checkpoint", ckpt.name),
        ("model_checksum", trained.model.checksum()), ("effective_config", cfg.effective())])
    _write_json(out / f"{key}.manifest.json", manifest)
    return key, score


def cmd_train_baseline(cfg: HarnessConfig, args) -> int:
    datasets, dataset_hash = _load_tasks(cfg)
    _ensure_dir(cfg.work_path / "runs")
    for task in _tasks(cfg):
        for shots in cfg.shots:
            for seed in cfg.run_seeds:
                key, score = _baseline_run(cfg, datasets[task], task, shots, seed, dataset_hash)
                log.info("train-baseline: %s %s=%.3f", key, score["metric_name"], score["metric_value"])
    return 0


# ----------------------------------------------------------------- report

def _manifest_digest(manifest: dict) -> str:
    # the echoed effective config carries local paths; leave it out so the
    # digest only depends on what was run
    body = {k: v for k, v in manifest.items() if k != "effective_config"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def collect_runs(run_dir, config_hash: str | None = None) -> list[evalkit.RunSummary]:
    """Run summaries from every manifest under ``run_dir``; all manifests
    must carry the same config hash."""
    run_dir = Path(run_dir)
    paths = sorted(run_dir.glob("*.manifest.json")) if run_dir.is_dir() else []
    if not paths:
        raise NoRunsFound(f"no run manifests in {run_dir}")
    runs, hashes = [], set()
    for p in paths:
        m = json.loads(p.read_text(encoding="utf-8"))
        hashes.add(m.get("config_hash"))
        s, spec = m["score"], m["spec"]
        runs.append(evalkit.RunSummary(spec["task"], spec["regime"], spec["variant"], spec["shots"], spec["seed"],
                                       s["metric_name"], s["metric_value"], s["failure_rate"], s["n"],
                                       m.get("dataset_hash", ""), _manifest_digest(m)))
    if len(hashes) > 1:
        raise MixedConfigs(f"run manifests come from {len(hashes)} different configs: {sorted(map(str, hashes))}")
    if config_hash is not None and hashes != {config_hash}:
        raise MixedConfigs(f"runs were produced with config {hashes.pop()}, current config is {config_hash}")
    return runs


def cmd_report(cfg: HarnessConfig, args) -> int:
    if args.fixture:
        runs = evalkit.load_fixture(args.fixture)
        out = Path(args.out) if args.out else cfg.work_path / "report-fixture"
    else:
        runs = collect_runs(cfg.work_path / "runs", cfg.config_hash())
        out = Path(args.out) if args.out else cfg.work_path / "report"
    report = evalkit.build_report(runs)
    _ensure_dir(out)
    txt, js = report.write(out)
    log.info("report: %d runs, %d rows; wrote %s and %s", len(runs), len(report.rows), txt, js)
    return 0


# --------------------------------------------------------------- selftest

def selftest() -> list[tuple[str, bool, str]]:
    """Quick oracle checks; returns ``(name, passed, detail)`` rows."""
    import numpy as np
    import torch

    from . import signals
    from .lm.gradcheck import grad_check
    from .lm.model import LmConfig, LmModel, SoftPrompt
    from .rng import make_rng

    results = []
    rng = make_rng(0, "selftest")
    worst = 0.0
    for _ in range(1000):
        act = str(rng.choice(sorted(synth.MET_VALUES)))
        dur, wt = float(rng.uniform(1, 180)), float(rng.uniform(80, 350))
        worst = max(worst, abs(synth.calories_burned(act, dur, wt) - synth.MET_VALUES[act] * dur * wt / 200))
    results.append(("calories formula", worst <= 1e-9, f"max error {worst:.2e}"))

    worst = 0.0
    for _ in range(1000):
        ibis = rng.uniform(300, 2000, size=int(rng.integers(1, 64)))
        worst = max(worst, abs(signals.ibi_to_hr(ibis) - 60000.0 / ibis.mean()))
    results.append(("interval to heart rate", bool(worst <= 1e-9), f"max error {worst:.2e}"))

    sweep = {59.999: "Sinus Bradycardia", 60: "Normal Sinus", 60.001: "Normal Sinus", 99.999: "Normal Sinus",
             100: "Normal Sinus", 100.001: "Sinus Tachycardia"}
    ok = all(signals.classify_rhythm_rule(hr).value == want for hr, want in sweep.items())
    results.append(("rhythm thresholds", ok, "boundary sweep"))

    spec = synth.default_rhythm_spec(signals.RhythmLabel.NORMAL_SINUS, n_beats=40)
    ibis = synth.gen_ibi_sequence(spec, 0, "selftest")
    ecg, truth = synth.gen_ecg_from_ibis(ibis, 125.0, 0, offset_s=0.5)
    peaks = signals.detect_r_peaks(ecg)
    hits = sum(bool(np.any(np.abs(peaks - t) <= 2)) for t in truth)
    results.append(("R-peak detection", hits >= 0.99 * len(truth), f"{hits}/{len(truth)} peaks within 2 samples"))

    torch.manual_seed(0)
    model = LmModel(LmConfig(d_model=16, n_layers=2, n_heads=2, context_len=64)).double()
    model.freeze()
    prompt = SoftPrompt(torch.randn(1, 16, dtype=torch.float64) * 0.5)
    err = grad_check(model, prompt, ([1, 40, 41, 42], [50, 51, 2]))
    results.append(("soft prompt gradient", err < 1e-4, f"max relative error {err:.2e}"))
    return results


def cmd_selftest(cfg: HarnessConfig, args) -> int:
    results = selftest()
    for name, ok, detail in results:
        log.info("selftest: %-24s %s (%s)", name, "ok" if ok else "FAILED", detail)
    return 0 if all(ok for _, ok, _ in results) else 1


# ------------------------------------------------------------------ parser

def _shots_arg(text: str) -> tuple:
    try:
        shots = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    return shots


def _list_arg(text: str) -> tuple:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (default: built-in toy configuration)")
    common.add_argument("--work-dir")
    common.add_argument("--checkpoint-dir")
    common.add_argument("--seed", type=int)
    common.add_argument("--seeds", type=_shots_arg, help="comma-separated run seeds")
    common.add_argument("--jobs", type=int)
    common.add_argument("--task", type=_list_arg, help="comma-separated task ids (default: all)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="healthlm", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write raw generator records")
    sub.add_parser("build-tasks", parents=[common], help="write task JSONL datasets")
    sub.add_parser("pretrain", parents=[common], help="pretrain the backbone")
    p = sub.add_parser("run", parents=[common], help="evaluate a regime")
    p.add_argument("--regime", required=True, choices=["zero-shot", "prompt-engineering", "prompt-tuning"])
    p.add_argument("--shots", type=_shots_arg)
    p.add_argument("--variant", default="context", choices=[v.value for v in Variant])
    p = sub.add_parser("train-baseline", parents=[common], help="train and evaluate the MLP baseline")
    p.add_argument("--shots", type=_shots_arg)
    p = sub.add_parser("report", parents=[common], help="render report tables")
    p.add_argument("--fixture", help="JSON list of run summaries to tabulate instead of the work directory")
    p.add_argument("--out", help="output directory")
    sub.add_parser("selftest", parents=[common], help="run the oracle checks")
    return parser


def resolve_config(args) -> HarnessConfig:
    cfg = load_config(args.config) if args.config else toy_config()
    overrides = {}
    for name in ("seed", "jobs", "seeds"):
        if getattr(args, name, None) is not None:
            overrides[name] = getattr(args, name)
    if args.work_dir:
        overrides["work_dir"] = args.work_dir
    if args.checkpoint_dir:
        overrides["checkpoint_dir"] = args.checkpoint_dir
    if args.task:
        overrides["tasks"] = args.task
    if getattr(args, "shots", None):
        overrides["shots"] = args.shots
    try:
        return replace(cfg, **overrides)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


COMMANDS = {"synth": cmd_synth, "build-tasks": cmd_build_tasks, "pretrain": cmd_pretrain, "run": cmd_run,
            "train-baseline": cmd_train_baseline, "report": cmd_report, "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        log.debug("effective config:\n%s", dump_config(cfg))
        return COMMANDS[args.command](cfg, args)
    except HarnessError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
