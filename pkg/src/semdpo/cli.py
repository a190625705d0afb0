"""Command-line entry point: ``semdpo <subcommand> ...``.

Exit status is 0 on success, 2 for usage, configuration or input errors and
3 when training aborts on a non-finite loss.
"""

from __future__ import annotations

import argparse
import logging
import sys

from semdpo import pipeline
from semdpo.config import ConfigError, load_config
from semdpo.trainer import MODES, TrainingAborted

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("semdpo")


def _alpha_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad alpha list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semdpo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, jobs=False):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, dest="master_seed", help="override master_seed")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="worker processes (1 = reference)")

    p = sub.add_parser("gen-data", help="prompts, SFT corpus and checkpoint, preference JSONL")
    common(p, jobs=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-prompts", type=int)
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("train", help="train a policy (sft, dpo, semdpo, hardfilter)")
    common(p)
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--init")
    p.add_argument("--ref")
    p.add_argument("--out", required=True)
    for name, typ in (("alpha", float), ("beta", float), ("tau", float), ("lr", float),
                      ("epochs", int), ("batch-size", int)):
        p.add_argument(f"--{name}", type=typ)

    p = sub.add_parser("eval", help="greedy-decode prompts and write the metrics CSV")
    common(p, jobs=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--prompts", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("compare", help="head-to-head win/tie/loss between two metric CSVs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tie-tol", type=float, default=1e-9)

    p = sub.add_parser("sweep-alpha", help="retrain Sem-DPO over a list of alphas")
    common(p, jobs=True)
    p.add_argument("--alphas", type=_alpha_list)
    p.add_argument("--out", required=True)
    p.add_argument("--data", dest="data_path")
    p.add_argument("--init", dest="sft_ckpt_path")
    p.add_argument("--prompts", dest="eval_prompts_path")

    p = sub.add_parser("verify-bounds", help="numerical check of both drift bounds")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ref")
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--epsilon", type=float)
    return parser


def _overrides(args, *names) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def run(args) -> int:
    if args.command == "compare":
        pipeline.compare_csv(args.a, args.b, args.out, args.tie_tol)
        return EXIT_OK

    if getattr(args, "jobs", 1) < 1:
        raise ConfigError("--jobs must be >= 1")
    names = {
        "gen-data": ("master_seed", "alpha"),
        "train": ("master_seed", "alpha", "beta", "tau", "lr", "epochs", "batch_size"),
        "eval": ("master_seed",),
        "sweep-alpha": ("master_seed", "data_path", "sft_ckpt_path", "eval_prompts_path"),
        "verify-bounds": ("master_seed", "alpha", "tau", "epsilon"),
    }[args.command]
    overrides = _overrides(args, *names)
    if args.command == "gen-data" and args.n_prompts is not None:
        overrides["n_prompts"] = args.n_prompts
    if args.command == "sweep-alpha" and args.alphas is not None:
        overrides["alphas"] = args.alphas
    if args.command == "train" and args.mode != "sft":
        if args.ref is None:
            raise ConfigError(f"--mode {args.mode} needs --ref")
        overrides["mode"] = args.mode
    cfg = load_config(args.config, overrides)

    if args.command == "gen-data":
        tb = pipeline.gen_data(cfg, args.out, args.jobs)
        log.info("wrote %d preference pairs to %s", len(tb.preferences), args.out)
    elif args.command == "train":
        _, curve = pipeline.run_train(cfg, args.mode, args.data, args.out, args.init, args.ref)
        log.info("final epoch loss %.6f", curve.losses[-1])
    elif args.command == "eval":
        pipeline.eval_to_csv(cfg, args.ckpt, args.prompts, args.out, args.jobs)
    elif args.command == "sweep-alpha":
        pipeline.sweep_to_csv(cfg, cfg.alphas, args.out, args.jobs)
    elif args.command == "verify-bounds":
        pipeline.verify_to_json(cfg, args.ckpt, args.data, args.out, args.ref)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return run(args)
    except TrainingAborted as exc:
        print(f"semdpo: training aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"semdpo {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
