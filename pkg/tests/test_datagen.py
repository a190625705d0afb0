import json
import math

import numpy as np
import pytest

from semdpo.datagen import (
    DatasetHeader,
    Lexicon,
    ScorerConfig,
    build_preference_dataset,
    dataset_jsonl,
    gen_prompts,
    gen_sft_corpus,
    generate_candidates,
    CandidateJob,
    label_pair,
    load_lexicon,
    read_jsonl,
    read_sft_jsonl,
    style_score,
    synth_preference_score,
    write_jsonl,
)
from semdpo.embedder import DEFAULT_EMBEDDER
from semdpo.objectives import PreferencePair, semantic_weight
from semdpo.policy import EOS, PolicyParams, build_vocab
from semdpo.rng import SplitMix64

LEX = load_lexicon()


@pytest.fixture(scope="module")
def vocab():
    words = list(LEX.subjects) + list(LEX.adjectives) + list(LEX.modifiers) + ["of"]
    return build_vocab([" ".join(words)])


def test_lexicon_asset():
    assert len(LEX.subjects) >= 40 and len(LEX.adjectives) >= 20 and len(LEX.modifiers) >= 24
    lists = [set(LEX.subjects), set(LEX.adjectives), set(LEX.modifiers)]
    assert not (lists[0] & lists[1] or lists[0] & lists[2] or lists[1] & lists[2])
    for w in LEX.words():
        assert w == w.lower() and w.split() == [w]
    assert {"detailed", "cinematic", "4k"} <= LEX.modifier_set


def test_lexicon_validation():
    with pytest.raises(ValueError):
        Lexicon(("cat",) * 40, ("red",) * 20, ("hdr",) * 24)


def test_prompts_grammar_and_determinism():
    prompts = gen_prompts(LEX, 500, SplitMix64(3))
    assert prompts == gen_prompts(LEX, 500, SplitMix64(3))
    allowed = LEX.words() | {"of"}
    n_long = 0
    for p in prompts:
        words = p.split()
        assert set(words) <= allowed
        assert words[0] in LEX.adjectives and words[1] in LEX.subjects
        if len(words) == 4:
            n_long += 1
            assert words[2] == "of" and words[3] in LEX.subjects
        else:
            assert len(words) == 2
    assert 200 < n_long < 300
    with pytest.raises(ValueError):
        gen_prompts(LEX, 0, SplitMix64(0))


def test_sft_corpus_shape():
    prompts = gen_prompts(LEX, 300, SplitMix64(4))
    counts = set()
    for x, y in gen_sft_corpus(LEX, prompts, SplitMix64(5)):
        assert y.startswith(x + " ")
        mods = y[len(x) + 1 :].split()
        assert set(mods) <= LEX.modifier_set and len(set(mods)) == len(mods)
        counts.add(len(mods))
    assert counts == {2, 3, 4}


def test_sft_corpus_golden_seed1():
    # frozen from the independent sampler oracle
    x = gen_prompts(LEX, 1, SplitMix64(1))
    assert gen_sft_corpus(LEX, x, SplitMix64(1)) == [
        ("lonely market of garden", "lonely market of garden fantasy matte intricate")
    ]


def test_style_score(vocab):
    mod, subj = vocab.index["hdr"], vocab.index["cat"] if "cat" in vocab.index else vocab.index[LEX.subjects[0]]
    assert style_score((mod, mod, EOS), LEX, vocab) == 1.0
    assert style_score((subj, EOS), LEX, vocab) == 0.0
    assert style_score((subj, mod, subj, mod, subj, EOS), LEX, vocab) == 0.4
    assert style_score((EOS,), LEX, vocab) == 0.0


def test_synth_score(vocab):
    y = vocab.encode("misty castle hdr 4k")
    exact = style_score(y, LEX, vocab)
    assert synth_preference_score("x", y, ScorerConfig(0.0), SplitMix64(2), LEX, vocab) == exact
    s = synth_preference_score("x", y, ScorerConfig(0.05), SplitMix64(2), LEX, vocab)
    assert s == synth_preference_score("x", y, ScorerConfig(0.05), SplitMix64(2), LEX, vocab)
    # golden: style 0.5 plus 0.05 times the seed-2 first normal from the oracle
    assert s == 0.5 + 0.05 * -0.0071460226801007085


def test_label_pair(vocab):
    a, b = vocab.encode("misty castle hdr"), vocab.encode("misty castle")
    cfg = ScorerConfig()
    p = label_pair("misty castle", a, b, (0.7, 0.3), cfg, vocab)
    assert p.y_w == a and p.y_l == b and math.isnan(p.weight)
    q = label_pair("misty castle", a, b, (0.3, 0.7), cfg, vocab)
    assert q.y_w == b and q.y_l == a
    assert label_pair("misty castle", a, b, (0.5, 0.5), cfg, vocab) is None


def test_candidates_labels_are_rederivable(small_cfg):
    from semdpo import pipeline

    tb = pipeline.build_testbed(small_cfg)
    seed = pipeline.seeds(small_cfg.master_seed)["candidates"]
    by_prompt = {p.x_text: p for p in tb.preferences}
    assert len(tb.preferences) <= len(tb.prompts)
    for i, x in enumerate(tb.prompts):
        job = CandidateJob(i, x, tb.sft_params, tb.vocab, tb.lex, small_cfg.scorer(), seed, 1.0, 16, DEFAULT_EMBEDDER)
        y_a, y_b, s_a, s_b = generate_candidates(job)
        pair = by_prompt.get(x)
        if pair is None or pair.y_w not in (y_a, y_b):
            continue
        s_w, s_l = (s_a, s_b) if pair.y_w == y_a else (s_b, s_a)
        assert s_w > s_l
    for p in tb.preferences:
        assert abs(p.weight - semantic_weight(small_cfg.alpha, p.drift_d)) <= 1e-12


def test_parallel_generation_matches_serial(small_cfg):
    from semdpo import pipeline

    tb = pipeline.build_testbed(small_cfg)
    seed = pipeline.seeds(0)["candidates"]
    args = (tb.sft_params, tb.prompts[:30], tb.vocab, tb.lex, small_cfg.scorer(), 8.0, seed)
    serial = build_preference_dataset(*args, jobs=1)
    parallel = build_preference_dataset(*args, jobs=2)
    assert serial == parallel


def _pair(d=0.25, alpha=8.0):
    return PreferencePair("misty owl", (3, 4, EOS), (5, EOS), "a b", "c", d, semantic_weight(alpha, d))


def test_jsonl_round_trip(tmp_path):
    header = DatasetHeader(8.0, "abc", 7)
    data = [_pair(0.1), _pair(1 / 3), _pair(0.0)]
    path = tmp_path / "d.jsonl"
    write_jsonl(data, path, header)
    h, back = read_jsonl(path)
    assert (h.alpha, h.vocab_hash, h.seed) == (8.0, "abc", 7)
    assert back == data
    assert all(a.weight == b.weight and a.drift_d == b.drift_d for a, b in zip(back, data))
    rec = json.loads(path.read_text().splitlines()[1])
    assert set(rec) == {"x", "yw", "yl", "yw_text", "yl_text", "d", "w"}


def test_jsonl_empty_and_single(tmp_path):
    header = DatasetHeader(2.0, "h", 0)
    write_jsonl([], tmp_path / "e.jsonl", header)
    assert read_jsonl(tmp_path / "e.jsonl")[1] == []
    one = [_pair(0.4, 2.0)]
    write_jsonl(one, tmp_path / "o.jsonl", header)
    assert read_jsonl(tmp_path / "o.jsonl")[1] == one


def test_jsonl_corrupted_weight_rejected(tmp_path):
    text = dataset_jsonl([_pair(0.1), _pair(0.2)], DatasetHeader(8.0, "h", 0))
    lines = text.splitlines()
    rec = json.loads(lines[2])
    rec["w"] = rec["w"] + 1e-6
    lines[2] = json.dumps(rec)
    (tmp_path / "bad.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match=":3:"):
        read_jsonl(tmp_path / "bad.jsonl")


def test_jsonl_malformed_line_named(tmp_path):
    text = dataset_jsonl([_pair()], DatasetHeader(8.0, "h", 0)) + "{not json\n"
    (tmp_path / "m.jsonl").write_text(text)
    with pytest.raises(ValueError, match=":3:"):
        read_jsonl(tmp_path / "m.jsonl")


def test_sft_jsonl_round_trip(small_run):
    vocab, examples = read_sft_jsonl(small_run / "sft.jsonl")
    assert len(examples) == 80
    for ex in examples:
        assert vocab.encode(ex.y_text) == ex.y


def test_generation_is_byte_deterministic(tmp_path, small_cfg, small_run):
    from semdpo import pipeline

    pipeline.gen_data(small_cfg, tmp_path)
    for name in ("prefs.jsonl", "sft.jsonl", "sft.ckpt.json", "prompts.json"):
        assert (tmp_path / name).read_bytes() == (small_run / name).read_bytes()


# -- drift signal on the default 1000-prompt testbed ------------------------------


def test_default_testbed_size_and_drift_variance(default_testbed):
    d = np.array([p.drift_d for p in default_testbed.preferences])
    assert len(d) == 1000
    assert d.var() > 0
    assert d.max() >= 0.5


def test_default_testbed_drift_reaches_low_end(default_testbed):
    """Smoke bound: some preferred rewrite must drift by at most 0.05."""
    d = min(p.drift_d for p in default_testbed.preferences)
    assert d <= 0.05, f"smallest drift on the default testbed is {d:.4f}"
