"""End-to-end stages behind the CLI subcommands.

Each stage reads and writes plain files so runs can be resumed or compared
stage by stage. Every random choice flows from ``master_seed`` through
:func:`semdpo.rng.derive_seed` with a fixed tag per purpose.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from semdpo.config import RunConfig
from semdpo.datagen import (
    DatasetHeader,
    Lexicon,
    build_preference_dataset,
    dataset_jsonl,
    gen_prompts,
    gen_sft_corpus,
    load_lexicon,
    read_jsonl,
    read_sft_jsonl,
    sft_jsonl,
)
from semdpo.evalx import (
    EvalConfig,
    MetricsRecord,
    SweepRow,
    effective_sample_size,
    evaluate_policy,
    head_to_head,
    mean_of,
    metrics_csv,
    read_metrics_csv,
    sweep_csv,
)
from semdpo.io_utils import atomic_write_text
from semdpo.objectives import LossConfig, PreferencePair, SFTExample, reweight
from semdpo.policy import Checkpoint, PolicyParams, Vocab, build_vocab, checkpoint_text
from semdpo.rng import SplitMix64, derive_seed
from semdpo.theory import verify_prop1, verify_prop2
from semdpo.trainer import LossCurve, TrainConfig, init_params, load_checkpoint, train

log = logging.getLogger(__name__)


def seeds(master: int) -> dict[str, int]:
    tags = ("prompts", "eval-prompts", "sft-corpus", "init", "sft-shuffle",
            "candidates", "pref-shuffle", "t2i-eval", "t2i-verify")
    return {t: derive_seed(master, t) for t in tags}


def prompts_digest(prompts: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(prompts).encode("utf-8")).hexdigest()


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


# -- gen-data -------------------------------------------------------------------


@dataclass
class Testbed:
    lex: Lexicon
    prompts: list[str]
    eval_prompts: list[str]
    vocab: Vocab
    sft_examples: list[SFTExample]
    sft_params: PolicyParams
    sft_curve: LossCurve
    preferences: list[PreferencePair]


def build_testbed(cfg: RunConfig, jobs: int = 1) -> Testbed:
    s = seeds(cfg.master_seed)
    emb = cfg.embedder()
    lex = load_lexicon(cfg.lexicon)
    prompts = gen_prompts(lex, cfg.n_prompts, SplitMix64(s["prompts"]))
    eval_prompts = gen_prompts(lex, cfg.n_eval_prompts, SplitMix64(s["eval-prompts"]))
    corpus = gen_sft_corpus(lex, prompts, SplitMix64(s["sft-corpus"]))
    vocab = build_vocab([y for _, y in corpus], cfg.vocab_max_size)
    examples = [SFTExample(x, vocab.encode(y, cfg.max_len), y) for x, y in corpus]

    init = init_params(len(vocab), cfg.embed_dim, cfg.init_scale, s["init"])
    sft_cfg = cfg.train_config("sft", seed=s["sft-shuffle"])
    log.info("SFT: %d examples, %d epochs, lr %g", len(examples), sft_cfg.epochs, sft_cfg.lr)
    sft_params, curve = train(sft_cfg, examples, init, emb=emb)

    prefs = build_preference_dataset(
        sft_params, prompts, vocab, lex, cfg.scorer(), cfg.alpha, s["candidates"],
        temperature=cfg.temperature, max_len=cfg.max_len, emb=emb, jobs=jobs,
    )
    log.info("preference pairs: %d of %d prompts", len(prefs), len(prompts))
    return Testbed(lex, prompts, eval_prompts, vocab, examples, sft_params, curve, prefs)


def gen_data(cfg: RunConfig, out_dir: str | Path, jobs: int = 1) -> Testbed:
    out = Path(out_dir)
    tb = build_testbed(cfg, jobs)
    echo = cfg.echo()
    atomic_write_text(out / "prompts.json", _dump_json(tb.prompts))
    atomic_write_text(out / "eval_prompts.json", _dump_json(tb.eval_prompts))
    atomic_write_text(out / "sft.jsonl", sft_jsonl(tb.sft_examples, tb.vocab, cfg.master_seed))
    atomic_write_text(
        out / "sft.ckpt.json",
        checkpoint_text(tb.sft_params, tb.vocab, {**echo, "mode": "sft"}, cfg.master_seed),
    )
    atomic_write_text(out / "sft.loss.csv", tb.sft_curve.to_csv())
    header = DatasetHeader(cfg.alpha, tb.vocab.digest(), cfg.master_seed, echo)
    atomic_write_text(out / "prefs.jsonl", dataset_jsonl(tb.preferences, header))
    return tb


# -- train ----------------------------------------------------------------------


def run_train(
    cfg: RunConfig,
    mode: str,
    data_path: str | Path,
    out_path: str | Path,
    init_path: str | Path | None = None,
    ref_path: str | Path | None = None,
) -> tuple[PolicyParams, LossCurve]:
    s = seeds(cfg.master_seed)
    emb = cfg.embedder()
    ref = None
    if mode == "sft":
        vocab, data = read_sft_jsonl(data_path)
        tcfg = cfg.train_config("sft", seed=s["sft-shuffle"])
    else:
        if ref_path is None:
            raise ValueError(f"mode {mode!r} needs --ref")
        header, data = read_jsonl(data_path)
        if mode == "semdpo" and header.alpha != cfg.alpha:
            data = reweight(data, cfg.alpha)
        ref_ckpt = load_checkpoint(ref_path)
        vocab, ref = ref_ckpt.vocab, ref_ckpt.params
        if header.vocab_hash != vocab.digest():
            raise ValueError("dataset vocab hash does not match the reference checkpoint")
        tcfg = cfg.train_config(mode, seed=s["pref-shuffle"])
    if init_path is not None:
        init_ckpt = load_checkpoint(init_path)
        if init_ckpt.vocab != vocab:
            raise ValueError("init checkpoint vocabulary does not match the data")
        init = init_ckpt.params
    elif ref is not None:
        init = ref
    else:
        init = init_params(len(vocab), cfg.embed_dim, cfg.init_scale, s["init"])
    if init.embed_dim != cfg.embed_dim:
        raise ValueError(f"checkpoint embed_dim {init.embed_dim} != config embed_dim {cfg.embed_dim}")
    params, curve = train(tcfg, data, init, ref, emb=emb)
    out = Path(out_path)
    atomic_write_text(out, checkpoint_text(params, vocab, {**cfg.echo(), "mode": mode}, cfg.master_seed))
    atomic_write_text(out.with_name(out.name.removesuffix(".json") + ".loss.csv"), curve.to_csv())
    return params, curve


# -- eval / compare -------------------------------------------------------------


def _eval_cfg(cfg: RunConfig) -> EvalConfig:
    return cfg.eval_config(seeds(cfg.master_seed)["t2i-eval"])


def load_prompts(path: str | Path) -> list[str]:
    prompts = json.loads(Path(path).read_text("utf-8"))
    if not isinstance(prompts, list) or not all(isinstance(p, str) for p in prompts):
        raise ValueError(f"{path} must hold a JSON list of strings")
    return prompts


def run_eval(cfg: RunConfig, ckpt: Checkpoint, prompts: Sequence[str], jobs: int = 1) -> list[MetricsRecord]:
    lex = load_lexicon(cfg.lexicon)
    return evaluate_policy(ckpt.params, prompts, ckpt.vocab, lex, _eval_cfg(cfg), jobs)


def eval_to_csv(cfg: RunConfig, ckpt_path, prompts_path, out_path, jobs: int = 1) -> list[MetricsRecord]:
    ckpt = load_checkpoint(ckpt_path)
    prompts = load_prompts(prompts_path)
    records = run_eval(cfg, ckpt, prompts, jobs)
    meta = {
        "prompts_sha256": prompts_digest(prompts),
        "ckpt_mode": ckpt.config.get("mode"),
        "config": cfg.echo(),
    }
    atomic_write_text(out_path, metrics_csv(records, json.dumps(meta, sort_keys=True)))
    return records


def compare_csv(a_path, b_path, out_path, tie_tol: float = 1e-9) -> dict:
    meta_a, rows_a = read_metrics_csv(Path(a_path).read_text("utf-8"))
    meta_b, rows_b = read_metrics_csv(Path(b_path).read_text("utf-8"))
    if meta_a.get("prompts_sha256") != meta_b.get("prompts_sha256"):
        raise ValueError("the two metric files were computed on different prompt sets")

    def records(rows):
        return [
            MetricsRecord(str(r["prompt_idx"]), "", r["sem_consistency"], r["pref_score"], r["t2i_drift"], r["drift_d"])
            for r in rows
        ]

    result = head_to_head(records(rows_a), records(rows_b), tie_tol)
    atomic_write_text(out_path, _dump_json(result))
    return result


# -- alpha sweep ------------------------------------------------------------------


def alpha_sweep(
    cfg: RunConfig,
    alphas: Sequence[float],
    data: Sequence[PreferencePair],
    sft: Checkpoint,
    prompts: Sequence[str],
    jobs: int = 1,
) -> tuple[list[SweepRow], list[list[MetricsRecord]]]:
    """Retrain Sem-DPO once per alpha on the same pairs, init, and shuffle seed."""
    if not alphas:
        raise ValueError("alphas must be non-empty")
    if len(set(alphas)) != len(alphas):
        raise ValueError("duplicate alpha values")
    shuffle_seed = seeds(cfg.master_seed)["pref-shuffle"]
    emb = cfg.embedder()
    rows, all_records = [], []
    for alpha in alphas:
        weighted = reweight(data, alpha)
        tcfg = cfg.train_config("semdpo", alpha=alpha, seed=shuffle_seed)
        params, _ = train(tcfg, weighted, sft.params, sft.params, emb=emb)
        records = run_eval(cfg, Checkpoint(params, sft.vocab, {}, cfg.master_seed), prompts, jobs)
        weights = [p.weight for p in weighted]
        rows.append(
            SweepRow(
                alpha=float(alpha),
                mean_sem=mean_of(records, "sem_consistency"),
                mean_pref=mean_of(records, "pref_score"),
                mean_w=sum(weights) / len(weights),
                ess=effective_sample_size(weights),
            )
        )
        all_records.append(records)
        log.info("alpha=%g mean_sem=%.4f mean_pref=%.4f", alpha, rows[-1].mean_sem, rows[-1].mean_pref)
    return rows, all_records


def sweep_to_csv(cfg: RunConfig, alphas: Sequence[float], out_path, jobs: int = 1) -> list[SweepRow]:
    _, data = read_jsonl(cfg.data_path)
    sft = load_checkpoint(cfg.sft_ckpt_path)
    prompts = load_prompts(cfg.eval_prompts_path)
    rows, _ = alpha_sweep(cfg, alphas, data, sft, prompts, jobs)
    comment = json.dumps({"config": {**cfg.echo(), "alphas": list(alphas)}}, sort_keys=True)
    atomic_write_text(out_path, sweep_csv(rows, comment))
    return rows


# -- verify-bounds ------------------------------------------------------------------


def verify_bounds(cfg: RunConfig, params: PolicyParams, ref: PolicyParams, data: Sequence[PreferencePair]) -> dict:
    loss_cfg = LossConfig(cfg.alpha, cfg.beta, cfg.tau)
    prop1 = verify_prop1(data, params, ref, loss_cfg, cfg.embedder(), cfg.max_len)
    items = [(p.x_text, p.yw_text) for p in data]
    prop2 = verify_prop2(items, cfg.epsilon, seeds(cfg.master_seed)["t2i-verify"], cfg.embedder())
    return {
        "config": cfg.echo(),
        "prop1": prop1.to_dict(),
        "prop2": prop2.to_dict(),
    }


def verify_to_json(cfg: RunConfig, ckpt_path, data_path, out_path, ref_path=None) -> dict:
    ckpt = load_checkpoint(ckpt_path)
    ref = load_checkpoint(ref_path or cfg.sft_ckpt_path)
    _, data = read_jsonl(data_path)
    if not data:
        raise ValueError("dataset is empty")
    report = verify_bounds(cfg, ckpt.params, ref.params, data)
    atomic_write_text(out_path, _dump_json(report))
    return report
