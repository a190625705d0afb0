"""Desk-scale metrics and the comparisons built from them.

``sem_consistency`` plays the role of a CLIP score (prompt/output embedding
cosine), ``pref_score`` that of a human-preference score (noise-free style
score), and ``t2i_drift`` the prompt-to-image embedding distance through the
synthetic bounded generator.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from semdpo.datagen import Lexicon, style_score
from semdpo.embedder import DEFAULT_EMBEDDER, EmbedderConfig, cosine_similarity, embed, euclidean_distance
from semdpo.io_utils import fmt_float, ordered_map
from semdpo.policy import DEFAULT_MAX_LEN, PolicyParams, Vocab, greedy_decode
from semdpo.rng import item_stream
from semdpo.theory import synth_t2i_generate

# metric name -> True when larger is better
METRICS = {
    "sem_consistency": True,
    "pref_score": True,
    "t2i_drift": False,
    "drift_d": False,
}
METRICS_CSV_COLUMNS = ("prompt_idx", "sem_consistency", "pref_score", "t2i_drift", "drift_d")


@dataclass
class MetricsRecord:
    prompt: str
    y_opt_text: str
    sem_consistency: float
    pref_score: float
    t2i_drift: float
    drift_d: float


@dataclass(frozen=True)
class EvalConfig:
    epsilon: float = 0.1
    stream_seed: int = 0
    max_len: int = DEFAULT_MAX_LEN
    emb: EmbedderConfig = DEFAULT_EMBEDDER


def score_output(
    index: int, prompt: str, y: Sequence[int], vocab: Vocab, lex: Lexicon, cfg: EvalConfig
) -> MetricsRecord:
    text = vocab.decode(y)
    ex, ey = embed(prompt, cfg.emb), embed(text, cfg.emb)
    sem = cosine_similarity(ex, ey)
    img = synth_t2i_generate(ey, cfg.epsilon, item_stream(cfg.stream_seed, index))
    return MetricsRecord(
        prompt=prompt,
        y_opt_text=text,
        sem_consistency=sem,
        pref_score=style_score(y, lex, vocab),
        t2i_drift=euclidean_distance(ex, img),
        drift_d=1.0 - sem,
    )


def _evaluate_one(item, params, vocab, lex, cfg):
    index, prompt = item
    y = greedy_decode(params, embed(prompt, cfg.emb), cfg.max_len)
    return score_output(index, prompt, y, vocab, lex, cfg)


def evaluate_policy(
    params: PolicyParams,
    prompts: Sequence[str],
    vocab: Vocab,
    lex: Lexicon,
    cfg: EvalConfig = EvalConfig(),
    jobs: int = 1,
) -> list[MetricsRecord]:
    """Greedy-decode every prompt and score the rewrite."""
    fn = functools.partial(_evaluate_one, params=params, vocab=vocab, lex=lex, cfg=cfg)
    return ordered_map(fn, list(enumerate(prompts)), jobs)


def metrics_csv(records: Sequence[MetricsRecord], comment: str | None = None) -> str:
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append(",".join(METRICS_CSV_COLUMNS))
    for i, r in enumerate(records):
        lines.append(
            ",".join([str(i)] + [fmt_float(getattr(r, m)) for m in METRICS_CSV_COLUMNS[1:]])
        )
    return "\n".join(lines) + "\n"


def mean_of(records: Sequence[MetricsRecord], metric: str) -> float:
    return sum(getattr(r, metric) for r in records) / len(records)


def head_to_head(
    a: Sequence[MetricsRecord], b: Sequence[MetricsRecord], tie_tol: float = 1e-9
) -> dict[str, dict[str, int]]:
    """Per-metric win/tie/loss counts of ``a`` against ``b``, prompt by prompt."""
    if len(a) != len(b) or any(ra.prompt != rb.prompt for ra, rb in zip(a, b)):
        raise ValueError("head-to-head needs the same prompts in the same order")
    out = {}
    for metric, higher_better in METRICS.items():
        counts = {"win": 0, "tie": 0, "loss": 0}
        for ra, rb in zip(a, b):
            diff = getattr(ra, metric) - getattr(rb, metric)
            if not higher_better:
                diff = -diff
            if abs(diff) <= tie_tol:
                counts["tie"] += 1
            elif diff > 0:
                counts["win"] += 1
            else:
                counts["loss"] += 1
        out[metric] = counts
    return out


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    if len(xs) != len(ys) or len(xs) < 2:
        raise ValueError("pearson needs two equal-length sequences of length >= 2")
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("pearson is undefined for a zero-variance input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def normalized_avg_score(table: dict[str, dict[str, float]], higher_better: dict[str, bool] | None = None) -> dict[str, float]:
    """Min-max normalise each metric across methods, then average per method.

    ``table`` maps method -> metric -> value. A metric where every method
    scores the same contributes 0.5. Metrics listed as lower-is-better in
    ``higher_better`` are flipped before averaging.
    """
    methods = list(table)
    if len(methods) < 2:
        raise ValueError("need at least two methods to normalise")
    metrics = list(table[methods[0]])
    higher_better = higher_better or {}
    totals = dict.fromkeys(methods, 0.0)
    for m in metrics:
        vals = [table[k][m] for k in methods]
        lo, hi = min(vals), max(vals)
        for k in methods:
            if hi == lo:
                score = 0.5
            else:
                score = (table[k][m] - lo) / (hi - lo)
                if not higher_better.get(m, True):
                    score = 1.0 - score
            totals[k] += score
    return {k: totals[k] / len(metrics) for k in methods}


@dataclass
class SweepRow:
    alpha: float
    mean_sem: float
    mean_pref: float
    mean_w: float
    ess: float

    def csv_row(self) -> str:
        return ",".join(fmt_float(v) for v in (self.alpha, self.mean_sem, self.mean_pref, self.mean_w, self.ess))


SWEEP_CSV_COLUMNS = ("alpha", "mean_sem", "mean_pref", "mean_w", "ess")


def effective_sample_size(weights: Sequence[float]) -> float:
    w = np.asarray(weights, dtype=np.float64)
    sq = float(w @ w)
    if sq == 0:
        raise ValueError("all weights are zero")
    return float(w.sum()) ** 2 / sq


def sweep_csv(rows: Sequence[SweepRow], comment: str | None = None) -> str:
    lines = [f"# {comment}"] if comment else []
    lines.append(",".join(SWEEP_CSV_COLUMNS))
    lines += [r.csv_row() for r in rows]
    return "\n".join(lines) + "\n"


def read_metrics_csv(text: str) -> tuple[dict, list[dict[str, float]]]:
    """Parse a metrics CSV; returns (comment-line JSON or {}, rows)."""
    import json

    meta: dict = {}
    rows = []
    header = None
    for line in text.splitlines():
        if line.startswith("#"):
            try:
                meta = json.loads(line[1:].strip())
            except json.JSONDecodeError:
                pass
            continue
        if not line.strip():
            continue
        cells = line.split(",")
        if header is None:
            header = cells
            if tuple(header) != METRICS_CSV_COLUMNS:
                raise ValueError(f"unexpected metrics columns {header}")
            continue
        rows.append({k: (int(v) if k == "prompt_idx" else float(v)) for k, v in zip(header, cells)})
    if header is None:
        raise ValueError("metrics CSV has no header row")
    return meta, rows
