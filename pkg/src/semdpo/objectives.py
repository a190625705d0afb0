"""Loss-level math: semantic weights, DPO / Sem-DPO / hard-filtered losses,
SFT negative log-likelihood, implicit reward and Bradley-Terry probability.

Per-pair term for every preference mode is ``w_eff * softplus(-delta)`` with

* ``dpo``        -- w_eff = 1
* ``semdpo``     -- w_eff = exp(-alpha * d), stored on the pair at build time
* ``hardfilter`` -- w_eff = 1{d <= tau}

and the batch objective is the plain mean of those terms (no renormalisation
by the total weight).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from semdpo.embedder import DEFAULT_EMBEDDER, EmbedderConfig, embed
from semdpo.policy import (
    DEFAULT_MAX_LEN,
    ParamGrad,
    PolicyParams,
    TokenSeq,
    accumulate_logprob_grad,
    sequence_logprob,
)

PREFERENCE_MODES = ("dpo", "semdpo", "hardfilter")


class NonFiniteError(ValueError):
    """A log-probability or loss term is NaN or infinite."""


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 8.0
    beta: float = 0.05
    tau: float = 0.5

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")


@dataclass
class PreferencePair:
    """One labelled comparison with its precomputed drift and weight.

    The policy reads the prompt only through its embedding, so the prompt is
    kept as text; ``xe`` caches that embedding.
    """

    x_text: str
    y_w: TokenSeq
    y_l: TokenSeq
    yw_text: str
    yl_text: str
    drift_d: float
    weight: float
    xe: np.ndarray | None = None

    def __post_init__(self):
        self.y_w = tuple(int(t) for t in self.y_w)
        self.y_l = tuple(int(t) for t in self.y_l)

    def prompt_embedding(self, cfg: EmbedderConfig = DEFAULT_EMBEDDER) -> np.ndarray:
        if self.xe is None or self.xe.shape[0] != cfg.embed_dim:
            self.xe = embed(self.x_text, cfg)
        return self.xe

    def __eq__(self, other):
        if not isinstance(other, PreferencePair):
            return NotImplemented
        return (
            self.x_text == other.x_text
            and self.y_w == other.y_w
            and self.y_l == other.y_l
            and self.yw_text == other.yw_text
            and self.yl_text == other.yl_text
            and self.drift_d == other.drift_d
            and self.weight == other.weight
        )


def semantic_weight(alpha: float, d: float) -> float:
    if alpha < 0 or d < 0:
        raise ValueError(f"alpha and d must be non-negative (alpha={alpha}, d={d})")
    return math.exp(-alpha * d)


def delta_logodds(beta, lpw_theta, lpw_ref, lpl_theta, lpl_ref) -> float:
    vals = (beta, lpw_theta, lpw_ref, lpl_theta, lpl_ref)
    if not all(math.isfinite(v) for v in vals):
        raise NonFiniteError(f"non-finite input to delta_logodds: {vals}")
    return beta * ((lpw_theta - lpw_ref) - (lpl_theta - lpl_ref))


def softplus(x: float) -> float:
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def pair_loss(delta: float) -> float:
    """-log sigmoid(delta)."""
    return softplus(-delta)


def semdpo_pair_loss(weight: float, delta: float) -> float:
    if not 0 < weight <= 1:
        raise ValueError(f"weight must lie in (0, 1], got {weight}")
    return weight * pair_loss(delta)


def hard_filter_pair_loss(tau: float, d: float, delta: float) -> float:
    if not tau > 0:
        raise ValueError("tau must be > 0")
    return pair_loss(delta) if d <= tau else 0.0


def implicit_reward(beta: float, lp_theta: float, lp_ref: float) -> float:
    """beta * log(pi_theta / pi_ref); the prompt-only log Z term is dropped."""
    return beta * (lp_theta - lp_ref)


def bt_preference_prob(r_w: float, r_l: float) -> float:
    return sigmoid(r_w - r_l)


def effective_weight(pair: PreferencePair, cfg: LossConfig, mode: str) -> float:
    if mode == "dpo":
        return 1.0
    if mode == "semdpo":
        return pair.weight
    if mode == "hardfilter":
        return 1.0 if pair.drift_d <= cfg.tau else 0.0
    raise ValueError(f"unknown preference mode {mode!r}")


def reweight(dataset: Sequence[PreferencePair], alpha: float) -> list[PreferencePair]:
    """Copy of ``dataset`` with weights recomputed for a new alpha."""
    return [
        PreferencePair(
            p.x_text, p.y_w, p.y_l, p.yw_text, p.yl_text, p.drift_d,
            semantic_weight(alpha, p.drift_d), p.xe,
        )
        for p in dataset
    ]


@dataclass
class RefLogprobs:
    """Frozen reference log-probabilities, one (chosen, rejected) row per pair."""

    chosen: np.ndarray
    rejected: np.ndarray


def reference_logprobs(
    dataset: Sequence[PreferencePair],
    ref: PolicyParams,
    emb: EmbedderConfig = DEFAULT_EMBEDDER,
    max_len: int = DEFAULT_MAX_LEN,
) -> RefLogprobs:
    chosen = np.empty(len(dataset))
    rejected = np.empty(len(dataset))
    for i, pair in enumerate(dataset):
        xe = pair.prompt_embedding(emb)
        chosen[i] = sequence_logprob(ref, xe, pair.y_w, max_len)
        rejected[i] = sequence_logprob(ref, xe, pair.y_l, max_len)
    return RefLogprobs(chosen, rejected)


def pair_deltas(
    dataset: Sequence[PreferencePair],
    p: PolicyParams,
    ref_lp: RefLogprobs,
    beta: float,
    emb: EmbedderConfig = DEFAULT_EMBEDDER,
    max_len: int = DEFAULT_MAX_LEN,
) -> np.ndarray:
    out = np.empty(len(dataset))
    for i, pair in enumerate(dataset):
        xe = pair.prompt_embedding(emb)
        out[i] = delta_logodds(
            beta,
            sequence_logprob(p, xe, pair.y_w, max_len),
            ref_lp.chosen[i],
            sequence_logprob(p, xe, pair.y_l, max_len),
            ref_lp.rejected[i],
        )
    return out


def _require_nonempty(dataset) -> None:
    if len(dataset) == 0:
        raise ValueError("dataset is empty")


def batch_loss(
    dataset: Sequence[PreferencePair],
    p: PolicyParams,
    ref: PolicyParams | RefLogprobs,
    cfg: LossConfig,
    mode: str,
    emb: EmbedderConfig = DEFAULT_EMBEDDER,
    max_len: int = DEFAULT_MAX_LEN,
) -> float:
    """Mean per-pair preference loss for ``mode`` over ``dataset``."""
    _require_nonempty(dataset)
    ref_lp = ref if isinstance(ref, RefLogprobs) else reference_logprobs(dataset, ref, emb, max_len)
    deltas = pair_deltas(dataset, p, ref_lp, cfg.beta, emb, max_len)
    total = 0.0
    for pair, delta in zip(dataset, deltas.tolist()):
        total += effective_weight(pair, cfg, mode) * pair_loss(delta)
    return total / len(dataset)


def batch_loss_and_grad(
    dataset: Sequence[PreferencePair],
    p: PolicyParams,
    ref: PolicyParams | RefLogprobs,
    cfg: LossConfig,
    mode: str,
    emb: EmbedderConfig = DEFAULT_EMBEDDER,
    max_len: int = DEFAULT_MAX_LEN,
) -> tuple[float, ParamGrad]:
    """Loss and its gradient w.r.t. the policy; the reference contributes none.

    d/dtheta [w * softplus(-delta)] = -w * sigmoid(-delta) * beta
    * (grad log pi(y_w|x) - grad log pi(y_l|x)).
    """
    _require_nonempty(dataset)
    ref_lp = ref if isinstance(ref, RefLogprobs) else reference_logprobs(dataset, ref, emb, max_len)
    n = len(dataset)
    grad = ParamGrad.zeros_like(p)
    total = 0.0
    for i, pair in enumerate(dataset):
        xe = pair.prompt_embedding(emb)
        lpw = sequence_logprob(p, xe, pair.y_w, max_len)
        lpl = sequence_logprob(p, xe, pair.y_l, max_len)
        delta = delta_logodds(cfg.beta, lpw, ref_lp.chosen[i], lpl, ref_lp.rejected[i])
        w = effective_weight(pair, cfg, mode)
        total += w * pair_loss(delta)
        if w == 0.0:
            continue
        coef = -w * sigmoid(-delta) * cfg.beta / n
        accumulate_logprob_grad(p, xe, pair.y_w, coef, grad, max_len)
        accumulate_logprob_grad(p, xe, pair.y_l, -coef, grad, max_len)
    return total / n, grad


def batch_grad(dataset, p, ref, cfg, mode, emb=DEFAULT_EMBEDDER, max_len=DEFAULT_MAX_LEN) -> ParamGrad:
    return batch_loss_and_grad(dataset, p, ref, cfg, mode, emb, max_len)[1]


# -- supervised fine-tuning ----------------------------------------------------


@dataclass
class SFTExample:
    x_text: str
    y: TokenSeq
    y_text: str = ""
    xe: np.ndarray | None = None

    def prompt_embedding(self, cfg: EmbedderConfig = DEFAULT_EMBEDDER) -> np.ndarray:
        if self.xe is None or self.xe.shape[0] != cfg.embed_dim:
            self.xe = embed(self.x_text, cfg)
        return self.xe


def sft_nll(
    dataset: Sequence[SFTExample],
    p: PolicyParams,
    emb: EmbedderConfig = DEFAULT_EMBEDDER,
    max_len: int = DEFAULT_MAX_LEN,
) -> float:
    """Teacher-forced negative log-likelihood, averaged over examples."""
    _require_nonempty(dataset)
    total = 0.0
    for ex in dataset:
        total -= sequence_logprob(p, ex.prompt_embedding(emb), ex.y, max_len)
    return total / len(dataset)


def sft_nll_and_grad(
    dataset: Sequence[SFTExample],
    p: PolicyParams,
    emb: EmbedderConfig = DEFAULT_EMBEDDER,
    max_len: int = DEFAULT_MAX_LEN,
) -> tuple[float, ParamGrad]:
    _require_nonempty(dataset)
    n = len(dataset)
    grad = ParamGrad.zeros_like(p)
    total = 0.0
    for ex in dataset:
        total -= accumulate_logprob_grad(p, ex.prompt_embedding(emb), ex.y, -1.0 / n, grad, max_len)
    return total / n, grad
