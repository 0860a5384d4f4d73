"""Harness configuration: one versioned INI file plus command-line overrides."""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .baseline import MlpConfig
from .errors import ConfigError
from .lm.model import LmConfig
from .lm.train import PretrainConfig, TuneConfig
from .tasks import TaskId

SCHEMA_VERSION = 1
ALLOWED_SHOTS = (3, 10, 25)


@dataclass(frozen=True)
class DataConfig:
    n_train_per_class: int = 25
    n_test: int = 100
    use_ecg: bool = True


@dataclass(frozen=True)
class CorpusConfig:
    n_chars: int = 2_000_000
    curated_fraction: float = 0.5
    # "task:weight" pairs, comma separated; unlisted tasks weigh 1
    task_weights: str = ""

    def __post_init__(self):
        self.weights()

    def weights(self) -> dict:
        out = {t.value: 1.0 for t in TaskId}
        for item in filter(None, (p.strip() for p in self.task_weights.split(","))):
            name, _, value = item.partition(":")
            name = name.strip()
            if name not in out:
                raise ConfigError(f"corpus.task_weights: unknown task {name!r}")
            try:
                out[name] = float(value)
            except ValueError:
                raise ConfigError(f"corpus.task_weights: bad weight in {item!r}") from None
            if out[name] < 0:
                raise ConfigError(f"corpus.task_weights: negative weight for {name}")
        return out


@dataclass(frozen=True)
class HarnessConfig:
    seed: int = 0
    work_dir: str = "work"
    checkpoint_dir: str = ""
    tasks: tuple = tuple(t.value for t in TaskId)
    shots: tuple = ALLOWED_SHOTS
    seeds: tuple = ()
    jobs: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    lm: LmConfig = field(default_factory=LmConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    tune: TuneConfig = field(default_factory=TuneConfig)
    mlp: MlpConfig = field(default_factory=MlpConfig)

    def __post_init__(self):
        bad = [s for s in self.shots if s not in ALLOWED_SHOTS]
        if bad:
            raise ConfigError(f"shot counts must be drawn from {ALLOWED_SHOTS}, got {bad}")
        for t in self.tasks:
            try:
                TaskId(t)
            except ValueError:
                raise ConfigError(f"unknown task {t!r}") from None
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    @property
    def run_seeds(self) -> tuple:
        return self.seeds or (self.seed,)

    @property
    def work_path(self) -> Path:
        return Path(self.work_dir)

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint_dir) if self.checkpoint_dir else self.work_path / "checkpoints"

    def hashed_part(self) -> dict:
        """Settings that determine artifact contents (paths, task selection,
        shot lists and worker count excluded)."""
        return {"schema_version": SCHEMA_VERSION, "seed": self.seed, "data": asdict(self.data),
                "corpus": asdict(self.corpus), "lm": asdict(self.lm), "pretrain": asdict(self.pretrain),
                "tune": asdict(self.tune), "mlp": asdict(self.mlp)}

    def config_hash(self) -> str:
        blob = json.dumps(self.hashed_part(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def effective(self) -> dict:
        out = self.hashed_part()
        out.update(work_dir=self.work_dir, checkpoint_dir=str(self.checkpoint_path), tasks=list(self.tasks),
                   shots=list(self.shots), seeds=list(self.run_seeds), jobs=self.jobs)
        return out


_SECTIONS = {"data": DataConfig, "corpus": CorpusConfig, "lm": LmConfig, "pretrain": PretrainConfig,
             "tune": TuneConfig, "mlp": MlpConfig}


def _convert(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            if value.strip().lower() in ("1", "true", "yes", "on"):
                return True
            if value.strip().lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(float(v) for v in value.split(","))
        return value
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {type(default).__name__}") from None


def _int_list(value: str, key: str) -> tuple:
    try:
        return tuple(int(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {value!r}") from None


def _section(cls, items: dict, name: str):
    defaults = cls()
    known = {f.name for f in fields(cls)}
    unknown = set(items) - known
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {', '.join(sorted(unknown))}")
    values = {k: _convert(v, getattr(defaults, k), f"{name}.{k}") for k, v in items.items()}
    try:
        return replace(defaults, **values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def parse_config(text: str) -> HarnessConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if not parser.has_section("harness"):
        raise ConfigError("config needs a [harness] section")
    h = dict(parser["harness"])
    version = h.pop("schema_version", None)
    if version is None:
        raise ConfigError("[harness] schema_version is required")
    if version.strip() != str(SCHEMA_VERSION):
        raise ConfigError(f"config schema_version {version} is not supported (expected {SCHEMA_VERSION})")
    kwargs = {}
    for key in ("seed", "jobs"):
        if key in h:
            kwargs[key] = _convert(h.pop(key), 0, f"harness.{key}")
    for key in ("work_dir", "checkpoint_dir"):
        if key in h:
            kwargs[key] = h.pop(key)
    if "tasks" in h:
        raw = h.pop("tasks").strip()
        if raw != "all":
            kwargs["tasks"] = tuple(t.strip() for t in raw.split(",") if t.strip())
    for key in ("shots", "seeds"):
        if key in h:
            kwargs[key] = _int_list(h.pop(key), f"harness.{key}")
    if h:
        raise ConfigError(f"[harness] unknown keys: {', '.join(sorted(h))}")
    for name, cls in _SECTIONS.items():
        if parser.has_section(name):
            kwargs[name] = _section(cls, dict(parser[name]), name)
    extra = set(parser.sections()) - {"harness", *_SECTIONS}
    if extra:
        raise ConfigError(f"unknown sections: {', '.join(sorted(extra))}")
    return HarnessConfig(**kwargs)


def load_config(path) -> HarnessConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def dump_config(cfg: HarnessConfig) -> str:
    """INI text that parses back to ``cfg``."""
    lines = ["[harness]", f"schema_version = {SCHEMA_VERSION}", f"seed = {cfg.seed}",
             f"work_dir = {cfg.work_dir}", f"checkpoint_dir = {cfg.checkpoint_dir}",
             f"tasks = {','.join(cfg.tasks)}", f"shots = {','.join(map(str, cfg.shots))}",
             f"seeds = {','.join(map(str, cfg.seeds))}", f"jobs = {cfg.jobs}", ""]
    for name in _SECTIONS:
        lines.append(f"[{name}]")
        for k, v in asdict(getattr(cfg, name)).items():
            if isinstance(v, (tuple, list)):
                v = ",".join(map(str, v))
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)


# saturating rhythm tasks get less text, the slow-to-learn ones more
TOY_TASK_WEIGHTS = ("ibi_to_afib:0.8,ibi_to_brady:0.4,ibi_to_tachy:0.4,"
                    "activity:1.5,calories:6,stress_ema:2.5,phq:2")


def toy_config(**overrides) -> HarnessConfig:
    """Reduced backbone and schedules sized for a single CPU core."""
    base = HarnessConfig(
        corpus=CorpusConfig(n_chars=6_000_000, task_weights=TOY_TASK_WEIGHTS),
        lm=LmConfig(d_model=96, n_layers=3, n_heads=4, context_len=320),
        pretrain=PretrainConfig(steps=2200, batch_size=16, learning_rate=1.5e-3, answer_weight=5.0),
        tune=TuneConfig(steps=100, learning_rate=3.0, batch_size=4, clip_norm=0.3, eval_every=20),
        seeds=(0, 1, 2))
    return replace(base, **overrides)
