"""Synthetic prompt-rewriting testbed.

Prompts come from a two-rule grammar over a frozen lexicon; SFT targets are
the prompt followed by a few style modifiers. Preference labels come from a
scorer that rewards style words only and ignores fidelity to the prompt, so
optimising against it produces semantic drift on purpose.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from semdpo.embedder import DEFAULT_EMBEDDER, EmbedderConfig, cosine_distance, embed
from semdpo.io_utils import atomic_write_text, ordered_map
from semdpo.objectives import PreferencePair, SFTExample, semantic_weight
from semdpo.policy import DEFAULT_MAX_LEN, EOS, PolicyParams, TokenSeq, Vocab, sample
from semdpo.rng import SplitMix64, item_stream

WEIGHT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Lexicon:
    subjects: tuple[str, ...]
    adjectives: tuple[str, ...]
    modifiers: tuple[str, ...]

    def __post_init__(self):
        lists = (self.subjects, self.adjectives, self.modifiers)
        for words in lists:
            for w in words:
                if not w or w != w.lower() or any(ch.isspace() for ch in w):
                    raise ValueError(f"lexicon word {w!r} must be a lowercase single word")
        a, b, c = (set(words) for words in lists)
        if len(a) + len(b) + len(c) != sum(len(words) for words in lists):
            raise ValueError("lexicon lists must not repeat words")
        if a & b or a & c or b & c:
            raise ValueError("lexicon lists must be pairwise disjoint")
        if len(self.subjects) < 40 or len(self.adjectives) < 20 or len(self.modifiers) < 24:
            raise ValueError("lexicon too small")

    @functools.cached_property
    def modifier_set(self) -> frozenset:
        return frozenset(self.modifiers)

    def words(self) -> set[str]:
        return set(self.subjects) | set(self.adjectives) | set(self.modifiers)


def load_lexicon(path: str | Path | None = None) -> Lexicon:
    if path is None:
        text = resources.files("semdpo").joinpath("data/lexicon.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    obj = json.loads(text)
    return Lexicon(tuple(obj["subjects"]), tuple(obj["adjectives"]), tuple(obj["modifiers"]))


@dataclass(frozen=True)
class ScorerConfig:
    noise_sigma: float = 0.05
    tie_eps: float = 1e-9

    def __post_init__(self):
        if not (math.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise ValueError("noise_sigma must be finite and >= 0")


def gen_prompts(lex: Lexicon, n: int, rng: SplitMix64) -> list[str]:
    """``ADJ SUBJ`` or ``ADJ SUBJ of SUBJ`` with equal probability."""
    if n < 1:
        raise ValueError("need at least one prompt")
    prompts = []
    for _ in range(n):
        long_form = rng.uniform() >= 0.5
        adj = lex.adjectives[rng.randbelow(len(lex.adjectives))]
        subj = lex.subjects[rng.randbelow(len(lex.subjects))]
        if long_form:
            other = lex.subjects[rng.randbelow(len(lex.subjects))]
            prompts.append(f"{adj} {subj} of {other}")
        else:
            prompts.append(f"{adj} {subj}")
    return prompts


def gen_sft_corpus(lex: Lexicon, prompts: Sequence[str], rng: SplitMix64) -> list[tuple[str, str]]:
    """Pair each prompt with itself plus 2-4 distinct modifiers."""
    if not prompts:
        raise ValueError("no prompts")
    corpus = []
    for x in prompts:
        k = 2 + rng.randbelow(3)
        mods = rng.sample_without_replacement(list(lex.modifiers), k)
        corpus.append((x, x + " " + " ".join(mods)))
    return corpus


def style_score(y: Sequence[int], lex: Lexicon, vocab: Vocab) -> float:
    """Fraction of non-EOS tokens that are style modifiers."""
    body = [t for t in y if t != EOS]
    if not body:
        return 0.0
    hits = sum(1 for t in body if vocab.tokens[t] in lex.modifier_set)
    return hits / len(body)


def synth_preference_score(
    x_text: str, y: Sequence[int], cfg: ScorerConfig, rng: SplitMix64, lex: Lexicon, vocab: Vocab
) -> float:
    """Style score plus N(0, sigma^2) labelling noise; ``x_text`` is ignored."""
    return style_score(y, lex, vocab) + cfg.noise_sigma * rng.normal()


def label_pair(
    x_text: str,
    y_a: TokenSeq,
    y_b: TokenSeq,
    scores: tuple[float, float],
    cfg: ScorerConfig,
    vocab: Vocab,
) -> PreferencePair | None:
    """Higher score wins; near-ties return None and the pair is dropped.

    Drift and weight are left as NaN for :func:`precompute_weight`.
    """
    s_a, s_b = scores
    if abs(s_a - s_b) < cfg.tie_eps:
        return None
    y_w, y_l = (y_a, y_b) if s_a > s_b else (y_b, y_a)
    return PreferencePair(x_text, y_w, y_l, vocab.decode(y_w), vocab.decode(y_l), math.nan, math.nan)


def precompute_weight(pair: PreferencePair, alpha: float, emb: EmbedderConfig = DEFAULT_EMBEDDER) -> PreferencePair:
    pair.drift_d = cosine_distance(embed(pair.x_text, emb), embed(pair.yw_text, emb))
    pair.weight = semantic_weight(alpha, pair.drift_d)
    return pair


@dataclass(frozen=True)
class CandidateJob:
    index: int
    prompt: str
    params: PolicyParams
    vocab: Vocab
    lex: Lexicon
    scorer: ScorerConfig
    stream_seed: int
    temperature: float
    max_len: int
    emb: EmbedderConfig


def generate_candidates(job: CandidateJob) -> tuple[TokenSeq, TokenSeq, float, float]:
    """Two samples and their noisy scores, all from the prompt's own stream."""
    rng = item_stream(job.stream_seed, job.index)
    xe = embed(job.prompt, job.emb)
    y_a = sample(job.params, xe, job.temperature, job.max_len, rng)
    y_b = sample(job.params, xe, job.temperature, job.max_len, rng)
    s_a = synth_preference_score(job.prompt, y_a, job.scorer, rng, job.lex, job.vocab)
    s_b = synth_preference_score(job.prompt, y_b, job.scorer, rng, job.lex, job.vocab)
    return y_a, y_b, s_a, s_b


def _labelled(job: CandidateJob, alpha: float) -> PreferencePair | None:
    y_a, y_b, s_a, s_b = generate_candidates(job)
    pair = label_pair(job.prompt, y_a, y_b, (s_a, s_b), job.scorer, job.vocab)
    if pair is None:
        return None
    return precompute_weight(pair, alpha, job.emb)


def build_preference_dataset(
    sft_params: PolicyParams,
    prompts: Sequence[str],
    vocab: Vocab,
    lex: Lexicon,
    scorer: ScorerConfig,
    alpha: float,
    stream_seed: int,
    *,
    temperature: float = 1.0,
    max_len: int = DEFAULT_MAX_LEN,
    emb: EmbedderConfig = DEFAULT_EMBEDDER,
    jobs: int = 1,
) -> list[PreferencePair]:
    """Sample, score and label two candidates per prompt (prompt order kept)."""
    work = [
        CandidateJob(i, x, sft_params, vocab, lex, scorer, stream_seed, temperature, max_len, emb)
        for i, x in enumerate(prompts)
    ]
    results = ordered_map(functools.partial(_labelled, alpha=alpha), work, jobs)
    return [r for r in results if r is not None]


# -- file formats --------------------------------------------------------------


@dataclass
class DatasetHeader:
    alpha: float
    vocab_hash: str
    seed: int
    config: dict | None = None

    def to_json(self) -> str:
        obj = {"alpha": self.alpha, "vocab_hash": self.vocab_hash, "seed": self.seed}
        if self.config is not None:
            obj["config"] = self.config
        return json.dumps(obj, sort_keys=True)


def dataset_jsonl(dataset: Sequence[PreferencePair], header: DatasetHeader) -> str:
    lines = [header.to_json()]
    for pair in dataset:
        lines.append(
            json.dumps(
                {
                    "x": pair.x_text,
                    "yw": list(pair.y_w),
                    "yl": list(pair.y_l),
                    "yw_text": pair.yw_text,
                    "yl_text": pair.yl_text,
                    "d": pair.drift_d,
                    "w": pair.weight,
                }
            )
        )
    return "\n".join(lines) + "\n"


def write_jsonl(dataset: Sequence[PreferencePair], path: str | Path, header: DatasetHeader) -> None:
    atomic_write_text(path, dataset_jsonl(dataset, header))


def read_jsonl(path: str | Path) -> tuple[DatasetHeader, list[PreferencePair]]:
    """Load a preference dataset, checking every stored weight against alpha."""
    lines = Path(path).read_text("utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file, expected a header line")
    try:
        head = json.loads(lines[0])
        header = DatasetHeader(float(head["alpha"]), str(head["vocab_hash"]), int(head["seed"]), head.get("config"))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}:1: malformed header: {exc}") from exc
    dataset = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            pair = PreferencePair(
                str(obj["x"]), obj["yw"], obj["yl"], str(obj["yw_text"]), str(obj["yl_text"]),
                float(obj["d"]), float(obj["w"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed record: {exc}") from exc
        expected = semantic_weight(header.alpha, pair.drift_d)
        if abs(expected - pair.weight) > WEIGHT_TOLERANCE:
            raise ValueError(
                f"{path}:{lineno}: stored weight {pair.weight} disagrees with "
                f"exp(-{header.alpha} * {pair.drift_d}) = {expected}"
            )
        dataset.append(pair)
    return header, dataset


def sft_jsonl(examples: Sequence[SFTExample], vocab: Vocab, seed: int) -> str:
    lines = [json.dumps({"vocab": list(vocab.tokens), "seed": seed})]
    for ex in examples:
        lines.append(json.dumps({"x": ex.x_text, "y_text": ex.y_text, "y": list(ex.y)}))
    return "\n".join(lines) + "\n"


def read_sft_jsonl(path: str | Path) -> tuple[Vocab, list[SFTExample]]:
    lines = Path(path).read_text("utf-8").splitlines()
    try:
        vocab = Vocab(tuple(json.loads(lines[0])["vocab"]))
    except (IndexError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}:1: malformed SFT header: {exc}") from exc
    examples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            examples.append(SFTExample(obj["x"], tuple(int(t) for t in obj["y"]), obj["y_text"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed record: {exc}") from exc
    return vocab, examples
