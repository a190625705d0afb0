"""Run configuration: one flat JSON object, validated on load."""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from semdpo.datagen import ScorerConfig
from semdpo.embedder import EmbedderConfig
from semdpo.evalx import EvalConfig
from semdpo.policy import DEFAULT_MAX_LEN, MAX_VOCAB
from semdpo.trainer import TrainConfig

CONFIG_VERSION = 1
SEED_ENV = "SEMDPO_SEED"
DEFAULT_ALPHAS = (0.0, 1.0, 2.0, 4.0, 8.0, 10.0, 15.0)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    master_seed: int = 0
    # embedder
    embed_dim: int = 64
    ngram_size: int = 3
    # testbed
    lexicon: str | None = None
    n_prompts: int = 1000
    n_eval_prompts: int = 200
    vocab_max_size: int = MAX_VOCAB
    max_len: int = DEFAULT_MAX_LEN
    temperature: float = 1.0
    noise_sigma: float = 0.05
    tie_eps: float = 1e-9
    # supervised stage
    sft_lr: float = 5.0
    sft_epochs: int = 40
    # preference stage
    mode: str = "semdpo"
    alpha: float = 8.0
    beta: float = 0.05
    tau: float = 0.5
    # 10, not the trainer's 0.1: beta = 0.05 scales every preference gradient
    lr: float = 10.0
    epochs: int = 5
    batch_size: int = 64
    init_scale: float = 0.01
    # evaluation
    epsilon: float = 0.1
    tie_tol: float = 1e-9
    alphas: list[float] = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    # working files consumed by sweep-alpha / verify-bounds
    data_path: str = "run/prefs.jsonl"
    sft_ckpt_path: str = "run/sft.ckpt.json"
    eval_prompts_path: str = "run/eval_prompts.json"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version!r}")
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if isinstance(val, float) and not math.isfinite(val):
                raise ConfigError(f"{f.name} must be finite")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if self.n_prompts < 1 or self.n_eval_prompts < 1:
            raise ConfigError("n_prompts and n_eval_prompts must be >= 1")
        if self.max_len < 2:
            raise ConfigError("max_len must be >= 2")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.sft_lr < 0 or self.sft_epochs < 1:
            raise ConfigError("sft_lr must be >= 0 and sft_epochs >= 1")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if not self.alphas:
            raise ConfigError("alphas must be non-empty")
        if len(set(self.alphas)) != len(self.alphas):
            raise ConfigError("alphas must not contain duplicates")
        if any(a < 0 for a in self.alphas):
            raise ConfigError("alphas must be >= 0")
        try:
            self.embedder()
            self.scorer()
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- views onto the per-module configs --

    def embedder(self) -> EmbedderConfig:
        return EmbedderConfig(self.embed_dim, self.ngram_size)

    def scorer(self) -> ScorerConfig:
        return ScorerConfig(self.noise_sigma, self.tie_eps)

    def train_config(self, mode: str | None = None, **overrides) -> TrainConfig:
        mode = mode or self.mode
        sft = mode == "sft"
        base = dict(
            mode=mode,
            alpha=self.alpha,
            beta=self.beta,
            tau=self.tau,
            lr=self.sft_lr if sft else self.lr,
            epochs=self.sft_epochs if sft else self.epochs,
            batch_size=self.batch_size,
            seed=self.master_seed,
            init_scale=self.init_scale,
            max_len=self.max_len,
        )
        base.update(overrides)
        return TrainConfig(**base)

    def eval_config(self, stream_seed: int) -> EvalConfig:
        return EvalConfig(self.epsilon, stream_seed, self.max_len, self.embedder())

    def echo(self) -> dict:
        """Provenance copy: every setting except file locations."""
        d = dataclasses.asdict(self)
        for key in ("data_path", "sft_ckpt_path", "eval_prompts_path", "lexicon"):
            d.pop(key)
        return d

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    default = getattr(RunConfig(), name)
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int) and not isinstance(value, bool) and isinstance(value, int):
        return value
    if isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, list) and isinstance(value, list):
        return [float(v) for v in value]
    if (default is None or isinstance(default, str)) and (value is None or isinstance(value, str)):
        return value
    raise ConfigError(f"config key {name!r} has the wrong type: {value!r}")


def config_from_dict(obj: dict, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig; unknown keys are rejected, overrides win over file values."""
    merged = dict(obj)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(merged) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            merged["master_seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env_seed!r}") from exc
    kwargs = {k: _coerce(k, v) for k, v in merged.items()}
    try:
        return RunConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    obj: dict = {}
    if path is not None:
        try:
            obj = json.loads(Path(path).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError("config file must hold a JSON object")
    return config_from_dict(obj, overrides)
