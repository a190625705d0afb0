import math
import sys

import numpy as np
import pytest

from semdpo import pipeline
from semdpo.config import RunConfig
from semdpo.embedder import cosine_distance, embed
from semdpo.objectives import PreferencePair, semantic_weight
from semdpo.policy import EOS, PolicyParams

WORDS = (
    "cat dog fox owl castle forest river neon golden misty ancient tiny "
    "portrait sunset lighthouse dragon robot garden 4k hdr cinematic detailed"
).split()


def random_params(rng: np.random.Generator, V: int, D: int = 64, scale: float = 0.5) -> PolicyParams:
    return PolicyParams(rng.normal(0.0, scale, (V, V)), rng.normal(0.0, scale, (V, D)))


def random_seq(rng: np.random.Generator, V: int, max_len: int) -> tuple:
    n = int(rng.integers(0, max_len))
    body = rng.integers(0, V, n)
    body[body == EOS] = 2
    return tuple(int(t) for t in body) + (EOS,)


def random_text(rng: np.random.Generator, lo: int = 1, hi: int = 5) -> str:
    return " ".join(rng.choice(WORDS, int(rng.integers(lo, hi + 1))))


def random_pairs(
    rng: np.random.Generator, n: int, V: int, alpha: float = 8.0, max_len: int = 16, drift: str = "embed"
) -> list[PreferencePair]:
    """Synthetic pairs; ``drift`` is either the real embedding drift or uniform in [0, 1]."""
    out = []
    for _ in range(n):
        x, yw, yl = random_text(rng), random_text(rng), random_text(rng)
        if drift == "embed":
            d = cosine_distance(embed(x), embed(yw))
        else:
            d = float(rng.uniform())
        out.append(
            PreferencePair(
                x, random_seq(rng, V, max_len), random_seq(rng, V, max_len), yw, yl, d, semantic_weight(alpha, d)
            )
        )
    return out


@pytest.fixture
def np_rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def default_cfg() -> RunConfig:
    return RunConfig()


@pytest.fixture(scope="session")
def default_testbed(default_cfg):
    """The seed-0 default testbed; built once per session (a few seconds)."""
    return pipeline.build_testbed(default_cfg)


@pytest.fixture(scope="session")
def small_cfg() -> RunConfig:
    return RunConfig(n_prompts=80, n_eval_prompts=20, sft_epochs=10, epochs=2, batch_size=16)


@pytest.fixture(scope="session")
def small_run(tmp_path_factory, small_cfg):
    """gen-data output for the small config, reused by the file-level tests."""
    out = tmp_path_factory.mktemp("small_run")
    pipeline.gen_data(small_cfg, out)
    return out


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    report = getattr(mod, "REPORT", None)
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(report):
        terminalreporter.write_line(report[n])


def close(a: float, b: float, tol: float) -> bool:
    return math.isfinite(a) and abs(a - b) <= tol
