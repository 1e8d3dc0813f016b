"""Flat ``key = value`` experiment configs.

Keys carry a section prefix::

    # planted diffusion, three folds
    data.source = synth              # synth | cascade_synth | files
    data.synth.n_authors = 500
    data.synth.years = 2000-2007
    task.kind = diffusion            # diffusion | cascade
    task.metapaths = APA, APAPA
    task.years = 2004-2006
    task.models = lstm, cnn_lstm, mlp
    model.lstm.hidden_dim = 32
    train.epochs = 30
    output.dir = out

Lists are comma separated, ranges are ``lo-hi``. Relative paths resolve
against the directory holding the config file. Unknown keys are errors.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .hetnet import TimeWindow
from .models import ARCHS, ModelConfig, TrainConfig
from .synthgen import CascadeSynthConfig, SynthConfig


class ConfigError(ValueError):
    pass


SOURCES = ("synth", "cascade_synth", "files")
TASKS = ("diffusion", "cascade")
DEFAULT_METAPATHS = {"diffusion": ("APA", "APAPA"), "cascade": ("PCP", "PVP")}


@dataclass(frozen=True)
class ExperimentConfig:
    source: str = "synth"
    nodes_path: str | None = None
    edges_path: str | None = None
    synth: dict = field(default_factory=dict)  # overrides for the generator config
    task: str = "diffusion"
    topic: str | None = None
    metapaths: tuple = ()
    years: tuple | None = None  # (first, last) prediction year, inclusive
    window_len: int = 4
    window_mode: str = "cumulative"
    origin: int | None = None
    anchor_cap: int = 1024
    anchor_as_of: str = "fold"  # fold | ever
    merge: str = "concat"  # concat | sum
    models: tuple = ("lstm", "cnn_lstm", "mlp", "cnn")
    model_overrides: dict = field(default_factory=dict)  # arch -> {field: value}
    train: TrainConfig = TrainConfig()
    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConfigError(f"data.source must be one of {SOURCES}, got {self.source!r}")
        if self.source == "files" and not (self.nodes_path and self.edges_path):
            raise ConfigError("data.source = files needs data.nodes and data.edges")
        if self.task not in TASKS:
            raise ConfigError(f"task.kind must be one of {TASKS}, got {self.task!r}")
        if not self.models:
            raise ConfigError("task.models lists no models")
        for m in self.models:
            if m not in ARCHS:
                raise ConfigError(f"unknown model {m!r} in task.models")
        if self.years is not None and self.years[0] > self.years[1]:
            raise ConfigError(f"empty year range {self.years}")
        if self.window_len < 1:
            raise ConfigError("task.window_len must be >= 1")
        if self.window_mode not in ("cumulative", "sliding"):
            raise ConfigError("task.window_mode must be cumulative or sliding")
        if self.anchor_as_of not in ("fold", "ever"):
            raise ConfigError("task.anchor_as_of must be fold or ever")
        if self.merge not in ("concat", "sum"):
            raise ConfigError("task.merge must be concat or sum")
        if self.anchor_cap < 1:
            raise ConfigError("task.anchor_cap must be positive")

    @property
    def metapath_names(self) -> tuple:
        return self.metapaths or DEFAULT_METAPATHS[self.task]

    def generator_config(self):
        cls = SynthConfig if self.source == "synth" else CascadeSynthConfig
        try:
            return cls(**self.synth)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad data.synth settings: {exc}") from None

    def model_config(self, arch: str) -> ModelConfig:
        head = "sigmoid_binary" if self.task == "diffusion" else "linear_regression"
        kw = dict(self.model_overrides.get(arch, {}))
        try:
            return ModelConfig(arch=arch, task_head=head, rng_seed=self.seed, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad model.{arch} settings: {exc}") from None

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)

    def canonical(self) -> str:
        """Stable text form of the settings that shape results (not the output dir)."""
        lines = []
        for f in fields(self):
            if f.name == "output_dir":
                continue
            v = getattr(self, f.name)
            if isinstance(v, dict):
                v = sorted((k, sorted(x.items()) if isinstance(x, dict) else x) for k, x in v.items())
            elif isinstance(v, TrainConfig):
                v = sorted(vars(v).items())
            lines.append(f"{f.name}={v!r}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()


def _split_list(v: str) -> tuple:
    return tuple(s.strip() for s in v.split(",") if s.strip())


def _range(v: str) -> tuple[int, int]:
    parts = v.replace(" ", "").split("-")
    try:
        if len(parts) == 1:
            return int(parts[0]), int(parts[0])
        if len(parts) == 2:
            return int(parts[0]), int(parts[1])
    except ValueError:
        pass
    raise ConfigError(f"bad range {v!r}; expected lo-hi")


def _coerce(default, raw: str, key: str):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, TimeWindow):
            return TimeWindow(*_range(raw))
        if isinstance(default, tuple):
            return _range(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from None


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"line {lineno}: empty key")
        if k in out:
            raise ConfigError(f"line {lineno}: duplicate key {k!r}")
        out[k] = v
    return out


def build_config(raw: dict[str, str], base_dir=".") -> ExperimentConfig:
    base = Path(base_dir)
    kw: dict = {}
    synth: dict = {}
    overrides: dict = {}
    train_kw: dict = {}
    synth_defaults = {**vars(SynthConfig()), **vars(CascadeSynthConfig())}
    model_defaults = vars(ModelConfig())
    train_defaults = vars(TrainConfig())
    simple = {
        "data.source": ("source", str), "task.kind": ("task", str), "task.topic": ("topic", str),
        "task.window_len": ("window_len", int), "task.window_mode": ("window_mode", str),
        "task.origin": ("origin", int), "task.anchor_cap": ("anchor_cap", int),
        "task.anchor_as_of": ("anchor_as_of", str), "task.merge": ("merge", str),
        "task.seed": ("seed", int),
    }
    for key, v in raw.items():
        if key in simple:
            name, typ = simple[key]
            try:
                kw[name] = typ(v)
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {v!r}") from None
        elif key in ("data.nodes", "data.edges"):
            kw["nodes_path" if key == "data.nodes" else "edges_path"] = str(base / v)
        elif key == "output.dir":
            kw["output_dir"] = str(base / v)
        elif key == "task.metapaths":
            kw["metapaths"] = tuple(s.upper() if "-" not in s else s for s in _split_list(v))
        elif key == "task.models":
            kw["models"] = _split_list(v)
        elif key == "task.years":
            kw["years"] = _range(v)
        elif key.startswith("data.synth."):
            name = key[len("data.synth."):]
            if name not in synth_defaults:
                raise ConfigError(f"unknown key {key!r}")
            synth[name] = _coerce(synth_defaults[name], v, key)
        elif key.startswith("model."):
            parts = key.split(".")
            if len(parts) != 3 or parts[1] not in ARCHS or parts[2] not in model_defaults \
                    or parts[2] in ("arch", "task_head", "rng_seed"):
                raise ConfigError(f"unknown key {key!r}")
            overrides.setdefault(parts[1], {})[parts[2]] = _coerce(model_defaults[parts[2]], v, key)
        elif key.startswith("train."):
            name = key[len("train."):]
            if name not in train_defaults or name == "seed":
                raise ConfigError(f"unknown key {key!r}")
            train_kw[name] = _coerce(train_defaults[name], v, key)
        else:
            raise ConfigError(f"unknown key {key!r}")
    try:
        cfg = ExperimentConfig(synth=synth, model_overrides=overrides,
                               train=TrainConfig(**train_kw), **kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.source != "files":
        gen_cls = SynthConfig if cfg.source == "synth" else CascadeSynthConfig
        bad = set(synth) - {f.name for f in fields(gen_cls)}
        if bad:
            raise ConfigError(f"data.synth keys {sorted(bad)} do not apply to source {cfg.source}")
        cfg.generator_config()
    for arch in cfg.models:
        cfg.model_config(arch)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return build_config(parse_config_text(text), base_dir=path.parent)
