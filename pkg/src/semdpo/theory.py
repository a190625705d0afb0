"""Numerical checks of the two drift bounds.

* Smooth vs hard filtering: ``|L_sem - L_tau| <= M * E|W - 1{d<=tau}|
  <= M * sup_d |W(d) - 1{d<=tau}|`` with ``M`` the empirical max of the
  per-pair loss.
* Prompt-to-image drift: ``||e(x) - E_img|| <= ||e(x) - e(y)|| + eps`` for a
  synthetic generator whose output stays within ``eps`` of ``e(y)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from semdpo.embedder import DEFAULT_EMBEDDER, EmbedderConfig, embed, euclidean_distance
from semdpo.objectives import (
    LossConfig,
    PreferencePair,
    pair_deltas,
    pair_loss,
    reference_logprobs,
    semantic_weight,
)
from semdpo.policy import DEFAULT_MAX_LEN, PolicyParams
from semdpo.rng import SplitMix64, item_stream

# Relative slack on the bound comparisons. When every per-pair loss is equal
# the first two links of the chain are equalities and the two sides differ
# only by summation rounding.
FP_SLACK = 1e-12


def _le(a: float, b: float) -> bool:
    return a <= b + FP_SLACK * max(abs(a), abs(b), 1e-300)


def pointwise_weight_gap_bound(alpha: float, tau: float) -> float:
    """sup over d >= 0 of |exp(-alpha d) - 1{d <= tau}|.

    Below the threshold the gap peaks at d = tau (1 - e^{-alpha tau}); just
    above it the gap tends to e^{-alpha tau}. The first branch binds iff
    alpha * tau >= ln 2.
    """
    if alpha < 0 or not tau > 0:
        raise ValueError("need alpha >= 0 and tau > 0")
    e = math.exp(-alpha * tau)
    return max(1.0 - e, e)


@dataclass
class Prop1Report:
    lhs_gap: float
    M_emp: float
    mean_weight_gap: float
    chain_bound: float
    pointwise_bound: float
    paper_bound: float
    holds_chain: bool
    holds_pointwise: bool
    holds_paper: bool

    def to_dict(self) -> dict:
        return asdict(self)


def verify_prop1(
    dataset: Sequence[PreferencePair],
    p: PolicyParams,
    ref: PolicyParams,
    cfg: LossConfig,
    emb: EmbedderConfig = DEFAULT_EMBEDDER,
    max_len: int = DEFAULT_MAX_LEN,
) -> Prop1Report:
    """Evaluate both objectives at (p, ref) and every bound in the chain.

    Weights are recomputed from each pair's drift with ``cfg.alpha`` so the
    check is valid for any alpha, not only the one the dataset was built with.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    deltas = pair_deltas(dataset, p, reference_logprobs(dataset, ref, emb, max_len), cfg.beta, emb, max_len)
    n = len(dataset)
    sem_total = hard_total = gap_total = 0.0
    m_emp = 0.0
    for pair, delta in zip(dataset, deltas.tolist()):
        loss = pair_loss(delta)
        w = semantic_weight(cfg.alpha, pair.drift_d)
        ind = 1.0 if pair.drift_d <= cfg.tau else 0.0
        sem_total += w * loss
        hard_total += ind * loss
        gap_total += abs(w - ind)
        m_emp = max(m_emp, loss)
    lhs = abs(sem_total / n - hard_total / n)
    mean_gap = gap_total / n
    chain = m_emp * mean_gap
    pointwise = m_emp * pointwise_weight_gap_bound(cfg.alpha, cfg.tau)
    paper = m_emp * (1.0 - math.exp(-cfg.alpha * cfg.tau))
    return Prop1Report(
        lhs_gap=lhs,
        M_emp=m_emp,
        mean_weight_gap=mean_gap,
        chain_bound=chain,
        pointwise_bound=pointwise,
        paper_bound=paper,
        holds_chain=_le(lhs, chain),
        holds_pointwise=_le(chain, pointwise),
        holds_paper=_le(lhs, paper),
    )


def random_unit_direction(dim: int, rng: SplitMix64) -> np.ndarray:
    g = np.array(rng.normals(dim))
    return g / np.linalg.norm(g)


def t2i_perturbation(dim: int, epsilon: float, rng: SplitMix64) -> tuple[float, np.ndarray]:
    """Radius ``r ~ U[0, epsilon]`` and unit direction ``u``; the direction is drawn first."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    u = random_unit_direction(dim, rng)
    return epsilon * rng.uniform(), u


def synth_t2i_generate(ye: np.ndarray, epsilon: float, rng: SplitMix64) -> np.ndarray:
    """Stand-in image embedding: ``ye + r * u`` with ``|u| = 1``, ``r ~ U[0, eps]``.

    The result is not renormalised. Randomness is consumed even when
    ``epsilon == 0`` so streams stay aligned across epsilon values.
    """
    r, u = t2i_perturbation(len(ye), epsilon, rng)
    if epsilon == 0:
        return np.array(ye, dtype=np.float64)
    return ye + r * u


@dataclass
class Prop2Report:
    d_t2i_drift: list[float] = field(default_factory=list)
    d_semantic_drift: list[float] = field(default_factory=list)
    d_t2i: list[float] = field(default_factory=list)
    epsilon: float = 0.0
    violations: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def verify_prop2(
    items: Sequence[tuple[str, str]],
    epsilon: float,
    seed: int,
    emb: EmbedderConfig = DEFAULT_EMBEDDER,
) -> Prop2Report:
    """Check the triangle-inequality bound item by item (Euclidean norm).

    Item ``i`` draws from its own stream ``seed ^ i``.
    """
    if not items:
        raise ValueError("no items to check")
    report = Prop2Report(epsilon=epsilon)
    for i, (x_text, y_text) in enumerate(items):
        ex, ey = embed(x_text, emb), embed(y_text, emb)
        img = synth_t2i_generate(ey, epsilon, item_stream(seed, i))
        t2i_drift = euclidean_distance(ex, img)
        sem_drift = euclidean_distance(ex, ey)
        report.d_t2i_drift.append(t2i_drift)
        report.d_semantic_drift.append(sem_drift)
        report.d_t2i.append(euclidean_distance(ey, img))
        if not t2i_drift <= sem_drift + epsilon:
            report.violations += 1
    return report
