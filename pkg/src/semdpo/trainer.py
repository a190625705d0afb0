"""Minibatch SGD loops for SFT and the three preference objectives."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from semdpo.embedder import DEFAULT_EMBEDDER, EmbedderConfig
from semdpo.io_utils import atomic_write_text, fmt_float
from semdpo.objectives import (
    PREFERENCE_MODES,
    LossConfig,
    NonFiniteError,
    PreferencePair,
    RefLogprobs,
    SFTExample,
    batch_loss_and_grad,
    reference_logprobs,
    sft_nll_and_grad,
)
from semdpo.policy import (
    DEFAULT_MAX_LEN,
    Checkpoint,
    PolicyParams,
    Vocab,
    checkpoint_text,
    parse_checkpoint,
)
from semdpo.rng import SplitMix64

MODES = ("sft",) + PREFERENCE_MODES


class TrainingAborted(RuntimeError):
    """Raised when the loss or the parameters stop being finite."""


@dataclass
class TrainConfig:
    mode: str = "semdpo"
    alpha: float = 8.0
    beta: float = 0.05
    tau: float = 0.5
    lr: float = 0.1
    epochs: int = 5
    batch_size: int = 64
    seed: int = 0
    init_scale: float = 0.01
    max_len: int = DEFAULT_MAX_LEN

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("alpha", "beta", "tau", "lr", "init_scale"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.loss_config()  # validates alpha, beta, tau

    def loss_config(self) -> LossConfig:
        return LossConfig(alpha=self.alpha, beta=self.beta, tau=self.tau)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossCurve:
    losses: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        rows = ["epoch,loss"] + [f"{i + 1},{fmt_float(v)}" for i, v in enumerate(self.losses)]
        return "\n".join(rows) + "\n"


def init_params(vocab_size: int, embed_dim: int, init_scale: float, seed: int) -> PolicyParams:
    """i.i.d. U[-init_scale, init_scale] entries, B row-major first, then C."""
    if vocab_size < 1 or embed_dim < 1:
        raise ValueError("vocab_size and embed_dim must be >= 1")
    rng = SplitMix64(seed)
    n_b, n_c = vocab_size * vocab_size, vocab_size * embed_dim
    draws = np.array([rng.uniform() for _ in range(n_b + n_c)])
    vals = init_scale * (2.0 * draws - 1.0)
    return PolicyParams(vals[:n_b].reshape(vocab_size, vocab_size), vals[n_b:].reshape(vocab_size, embed_dim))


def _check_finite(loss: float, params: PolicyParams, epoch: int, step: int) -> None:
    if not math.isfinite(loss) or not params.all_finite():
        raise TrainingAborted(
            f"non-finite state at epoch {epoch + 1}, step {step}: loss={loss!r}; "
            "lower the learning rate"
        )


def train(
    config: TrainConfig,
    data: Sequence[SFTExample] | Sequence[PreferencePair],
    init: PolicyParams,
    ref: PolicyParams | None = None,
    emb: EmbedderConfig = DEFAULT_EMBEDDER,
    epoch_callback=None,
) -> tuple[PolicyParams, LossCurve]:
    """Run ``config.epochs`` passes of minibatch SGD from a copy of ``init``.

    Data order is reshuffled each epoch (Fisher-Yates on the seeded stream).
    The recorded epoch loss is the size-weighted mean of the minibatch losses
    measured before each update. ``ref`` is only read, once, to cache its
    log-probabilities.
    """
    if len(data) == 0:
        raise ValueError("training data is empty")
    preference = config.mode in PREFERENCE_MODES
    if preference and ref is None:
        raise ValueError(f"mode {config.mode!r} needs a reference policy")

    params = init.copy()
    loss_cfg = config.loss_config()
    rng = SplitMix64(config.seed)
    order = list(range(len(data)))
    ref_lp: RefLogprobs | None = None
    if preference:
        ref_lp = reference_logprobs(data, ref, emb, config.max_len)

    curve = LossCurve()
    for epoch in range(config.epochs):
        rng.shuffle(order)
        epoch_total = 0.0
        for step, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start : start + config.batch_size]
            batch = [data[i] for i in idx]
            try:
                if preference:
                    sub_ref = RefLogprobs(ref_lp.chosen[idx], ref_lp.rejected[idx])
                    loss, grad = batch_loss_and_grad(batch, params, sub_ref, loss_cfg, config.mode, emb, config.max_len)
                else:
                    loss, grad = sft_nll_and_grad(batch, params, emb, config.max_len)
            except NonFiniteError:
                loss = math.nan
            _check_finite(loss, params, epoch, step)
            epoch_total += loss * len(batch)
            params.B -= config.lr * grad.gB
            params.C -= config.lr * grad.gC
            _check_finite(loss, params, epoch, step)
        curve.losses.append(epoch_total / len(data))
        if epoch_callback is not None:
            epoch_callback(epoch, params)
    return params, curve


def save_checkpoint(
    params: PolicyParams, vocab: Vocab, config: dict, path: str | Path, master_seed: int = 0
) -> None:
    atomic_write_text(path, checkpoint_text(params, vocab, config, master_seed))


def load_checkpoint(path: str | Path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_text("utf-8"))
