"""Prompt-conditioned bigram softmax policy.

Next-token logits are ``B[prev] + C @ e(x)``: a bigram table plus a bias
that depends on the embedding of the prompt being rewritten. A sequence is
implicitly preceded by BOS and ends with exactly one EOS. When a sequence
reaches ``max_len`` tokens the final EOS is forced, so that position
contributes log 1 = 0 and the distribution over terminated sequences is
normalised.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from semdpo import kernels
from semdpo.embedder import EmbeddingVector
from semdpo.rng import SplitMix64

BOS, EOS, UNK = 0, 1, 2
SPECIAL_TOKENS = ("<bos>", "<eos>", "<unk>")
MAX_VOCAB = 512
DEFAULT_MAX_LEN = 16
GREEDY_TEMPERATURE = 1e-6
CHECKPOINT_VERSION = 1

TokenSeq = tuple  # tuple[int, ...], trailing EOS included


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        if len(self.tokens) > MAX_VOCAB:
            raise ValueError(f"vocabulary larger than {MAX_VOCAB}")
        if tuple(self.tokens[:3]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with <bos>, <eos>, <unk>")
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str, max_len: int = DEFAULT_MAX_LEN) -> TokenSeq:
        """Whitespace-tokenise, map OOV words to UNK, append EOS.

        Words beyond ``max_len - 1`` are dropped so the result is a valid
        TokenSeq.
        """
        ids = [self.index.get(w, UNK) for w in text.split()][: max_len - 1]
        return tuple(ids) + (EOS,)

    def decode(self, seq: Sequence[int]) -> str:
        return " ".join(self.tokens[i] for i in seq if i not in (BOS, EOS))

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


def build_vocab(corpus: Sequence[str], max_size: int = MAX_VOCAB) -> Vocab:
    """Most frequent whitespace tokens first, ties broken lexicographically."""
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    if max_size < len(SPECIAL_TOKENS):
        raise ValueError("max_size must leave room for the special tokens")
    counts = Counter(w for line in corpus for w in line.split())
    for special in SPECIAL_TOKENS:
        counts.pop(special, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [w for w, _ in ranked[: max_size - len(SPECIAL_TOKENS)]]
    return Vocab(SPECIAL_TOKENS + tuple(kept))


def validate_seq(y: Sequence[int], vocab_size: int, max_len: int = DEFAULT_MAX_LEN) -> None:
    if not y or y[-1] != EOS:
        raise ValueError("token sequence must end with EOS")
    if len(y) > max_len:
        raise ValueError(f"token sequence longer than max_len={max_len}")
    for i, tok in enumerate(y):
        if not 0 <= tok < vocab_size:
            raise ValueError(f"token id {tok} out of range for vocab of {vocab_size}")
        if tok == EOS and i != len(y) - 1:
            raise ValueError("EOS may only appear at the end")


@dataclass
class PolicyParams:
    B: np.ndarray  # (V, V) bigram logits
    C: np.ndarray  # (V, embed_dim) prompt conditioning

    def __post_init__(self):
        self.B = np.ascontiguousarray(self.B, dtype=np.float64)
        self.C = np.ascontiguousarray(self.C, dtype=np.float64)
        V = self.B.shape[0]
        if self.B.shape != (V, V) or self.C.ndim != 2 or self.C.shape[0] != V:
            raise ValueError(f"inconsistent shapes B{self.B.shape} C{self.C.shape}")

    @property
    def vocab_size(self) -> int:
        return self.B.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.C.shape[1]

    @classmethod
    def zeros(cls, vocab_size: int, embed_dim: int) -> PolicyParams:
        return cls(np.zeros((vocab_size, vocab_size)), np.zeros((vocab_size, embed_dim)))

    def copy(self) -> PolicyParams:
        return PolicyParams(self.B.copy(), self.C.copy())

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.B).all() and np.isfinite(self.C).all())

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(self.B.tobytes())
        h.update(self.C.tobytes())
        return h.hexdigest()


class ParamGrad(NamedTuple):
    gB: np.ndarray
    gC: np.ndarray

    @classmethod
    def zeros_like(cls, p: PolicyParams) -> ParamGrad:
        return cls(np.zeros_like(p.B), np.zeros_like(p.C))

    def norm(self) -> float:
        return math.sqrt(float(np.sum(self.gB * self.gB) + np.sum(self.gC * self.gC)))


def next_token_logits(p: PolicyParams, prev: int, xe: EmbeddingVector) -> np.ndarray:
    if not 0 <= prev < p.vocab_size:
        raise IndexError(f"previous token {prev} out of range")
    return p.B[prev] + kernels.cond_vector(p.C, np.asarray(xe, dtype=np.float64))


def sequence_logprob(
    p: PolicyParams, xe: EmbeddingVector, y: Sequence[int], max_len: int = DEFAULT_MAX_LEN
) -> float:
    """log pi(y | x), summed over every generated position through EOS."""
    cond = kernels.cond_vector(p.C, np.asarray(xe, dtype=np.float64))
    return kernels.seq_logprob(p.B, cond, np.asarray(y, dtype=np.intp), max_len)


def accumulate_logprob_grad(
    p: PolicyParams,
    xe: EmbeddingVector,
    y: Sequence[int],
    scale: float,
    grad: ParamGrad,
    max_len: int = DEFAULT_MAX_LEN,
) -> float:
    """Add ``scale * d log pi(y|x) / d(B, C)`` into ``grad``; return log pi(y|x)."""
    xe = np.asarray(xe, dtype=np.float64)
    cond = kernels.cond_vector(p.C, xe)
    gcond = np.zeros(p.vocab_size)
    lp = kernels.seq_logprob_grad(p.B, cond, np.asarray(y, dtype=np.intp), max_len, scale, grad.gB, gcond)
    grad.gC[...] += np.outer(gcond, xe)
    return lp


def logprob_grad(
    p: PolicyParams, xe: EmbeddingVector, y: Sequence[int], max_len: int = DEFAULT_MAX_LEN
) -> ParamGrad:
    grad = ParamGrad.zeros_like(p)
    accumulate_logprob_grad(p, xe, y, 1.0, grad, max_len)
    return grad


def _pick(probs: np.ndarray, u: float) -> int:
    acc = 0.0
    for v, pv in enumerate(probs.tolist()):
        acc += pv
        if u < acc:
            return v
    # u landed in the rounding gap above the last partial sum
    return int(np.flatnonzero(probs > 0)[-1])


def sample(
    p: PolicyParams,
    xe: EmbeddingVector,
    temperature: float = 1.0,
    max_len: int = DEFAULT_MAX_LEN,
    rng: SplitMix64 | None = None,
) -> TokenSeq:
    """Draw one sequence; BOS is never emitted and EOS is forced at ``max_len``.

    Below ``GREEDY_TEMPERATURE`` decoding is greedy (lowest index wins ties)
    and ``rng`` is not touched.
    """
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    greedy = temperature < GREEDY_TEMPERATURE
    if not greedy and rng is None:
        raise ValueError("sampling needs an rng")
    cond = kernels.cond_vector(p.C, np.asarray(xe, dtype=np.float64))
    out: list[int] = []
    prev = BOS
    while len(out) < max_len - 1:
        logits = p.B[prev] + cond
        logits[BOS] = -np.inf
        if greedy:
            tok = int(np.argmax(logits))
        else:
            z = logits / temperature
            z -= z.max()
            probs = np.exp(z)
            probs /= probs.sum()
            tok = _pick(probs, rng.uniform())
        if tok == EOS:
            break
        out.append(tok)
        prev = tok
    return tuple(out) + (EOS,)


def greedy_decode(p: PolicyParams, xe: EmbeddingVector, max_len: int = DEFAULT_MAX_LEN) -> TokenSeq:
    return sample(p, xe, temperature=GREEDY_TEMPERATURE / 2, max_len=max_len)


def _fd_coordinates(p: PolicyParams, y: Sequence[int], count: int) -> list[tuple[str, int, int]]:
    """Deterministic coordinate subset: B rows touched by y, then C rows."""
    rows = sorted({BOS, *y[:-1]})
    V, D = p.vocab_size, p.embed_dim
    coords: list[tuple[str, int, int]] = []
    for k in range(count):
        if k % 2 == 0:
            coords.append(("B", rows[(k // 2) % len(rows)], (7 * k + 3) % V))
        else:
            coords.append(("C", (5 * k + 1) % V, (11 * k + 2) % D))
    return coords


def finite_diff_check(
    p: PolicyParams,
    xe: EmbeddingVector,
    y: Sequence[int],
    epsilon: float = 1e-5,
    n_coords: int = 20,
    max_len: int = DEFAULT_MAX_LEN,
) -> float:
    """Max relative error between the analytic gradient and central differences."""
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    analytic = logprob_grad(p, xe, y, max_len)
    probe = p.copy()
    worst = 0.0
    for name, i, j in _fd_coordinates(p, y, n_coords):
        arr = probe.B if name == "B" else probe.C
        g = (analytic.gB if name == "B" else analytic.gC)[i, j]
        orig = arr[i, j]
        arr[i, j] = orig + epsilon
        f_plus = sequence_logprob(probe, xe, y, max_len)
        arr[i, j] = orig - epsilon
        f_minus = sequence_logprob(probe, xe, y, max_len)
        arr[i, j] = orig
        numeric = (f_plus - f_minus) / (2 * epsilon)
        worst = max(worst, relative_error(g, numeric))
    return worst


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


# -- checkpoint I/O -----------------------------------------------------------


def _float_list(arr: np.ndarray) -> str:
    return "[" + ",".join(format(float(v), ".17g") for v in arr.ravel()) + "]"


def checkpoint_text(params: PolicyParams, vocab: Vocab, config: dict, master_seed: int) -> str:
    """Serialise to the checkpoint JSON; floats use 17 significant digits."""
    if not params.all_finite():
        raise ValueError("refusing to serialise non-finite parameters")
    head = [
        f'"version":{CHECKPOINT_VERSION}',
        f'"vocab":{json.dumps(list(vocab.tokens))}',
        f'"V":{params.vocab_size}',
        f'"embed_dim":{params.embed_dim}',
        f'"B":{_float_list(params.B)}',
        f'"C":{_float_list(params.C)}',
        f'"config":{json.dumps(config, sort_keys=True)}',
        f'"master_seed":{int(master_seed)}',
    ]
    return "{" + ",".join(head) + "}\n"


@dataclass
class Checkpoint:
    params: PolicyParams
    vocab: Vocab
    config: dict
    master_seed: int


def parse_checkpoint(text: str) -> Checkpoint:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"checkpoint is not valid JSON: {exc}") from exc
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {obj.get('version')!r}")
    V, D = int(obj["V"]), int(obj["embed_dim"])
    vocab = Vocab(tuple(obj["vocab"]))
    if len(vocab) != V:
        raise ValueError(f"vocab has {len(vocab)} tokens but V={V}")
    B = np.array(obj["B"], dtype=np.float64)
    C = np.array(obj["C"], dtype=np.float64)
    if B.size != V * V or C.size != V * D:
        raise ValueError("parameter array sizes do not match V and embed_dim")
    params = PolicyParams(B.reshape(V, V), C.reshape(V, D))
    return Checkpoint(params, vocab, obj.get("config", {}), int(obj.get("master_seed", 0)))
