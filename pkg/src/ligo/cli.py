"""Command line: ``ligo {pretrain,grow,train,compare,verify}``.

Exit codes: 0 success, 1 verification failure, 2 usage, config or growth-constraint error,
3 data or checkpoint error, 4 divergence, 5 strict comparison failure.

Each command writes only the paths it is given plus siblings derived from
``--out``: ``<out>.csv`` (metrics), ``<out>.manifest.json`` and, for LiGO
growth, ``<out>.ligo.ckpt``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional

from . import __version__
from . import model as tfm
from .checkpoint import content_hash, read_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .data import batch_stream, load_corpus
from .errors import ConfigError, DataError, LigoError, SpecError
from .growth import GrowthSpec, OPERATORS, grow
from .ligo_operator import INIT_STRATEGIES, ligo_expand, ligo_init, ligo_learn, ligo_step_flops
from .linalg import make_rng
from .model import ParamSet
from .optim import OptimizerConfig
from .trainer import compare_runs, fixed_eval_batches, read_metrics_csv, train, write_metrics_csv

log = logging.getLogger("ligo")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED, EXIT_STRICT = 0, 1, 2, 3, 4, 5


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Manifest:
    """Run manifest, written before work starts and finalized at the end."""

    def __init__(self, out: Path, argv, command: str, **fields):
        self.path = _sibling(out, ".manifest.json")
        self.data = {"tool": "ligo", "version": __version__, "command": command,
                     "argv": list(argv), "started": _now(), **fields}
        self.write()

    def write(self):
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def finish(self, **fields):
        self.data.update(fields, finished=_now())
        self.write()


def _accounting(header: dict) -> dict:
    acc = header.get("meta", {}).get("accounting", {})
    return {"steps": int(acc.get("steps", 0)), "tokens_seen": int(acc.get("tokens_seen", 0)),
            "flops_cum": int(acc.get("flops_cum", 0))}


def _train_config(cfg: RunConfig, model_cfg: tfm.ModelConfig, seed: Optional[int]):
    tc = cfg.train_config(seq_len=model_cfg.seq_len, dtype=model_cfg.dtype)
    if seed is not None:
        tc = tc.__class__(**{**tc.to_dict(), "seed": seed})
    return tc


def _run_training(params: ParamSet, corpus, tc, out: Path, manifest: Manifest, acc: dict,
                  metrics: Optional[Path], append: bool, stop_at: Optional[float] = None):
    metrics = metrics or _sibling(out, ".csv")
    manifest.data.update(metrics=str(metrics), train=tc.to_dict())
    manifest.write()
    trained, records = train(params, corpus, tc, flops_offset=acc["flops_cum"],
                             tokens_offset=acc["tokens_seen"], step_offset=acc["steps"],
                             stop_at_eval_loss=stop_at)
    write_metrics_csv(metrics, records, append=append)
    last = records[-1]
    meta = {"accounting": {"steps": last.step, "tokens_seen": last.tokens_seen, "flops_cum": last.flops_cum},
            "manifest": manifest.path.name, "vocab": corpus.vocab}
    save_checkpoint(trained, out, meta)
    manifest.finish(final_eval_loss=last.eval_loss, output=str(out))
    print(f"wrote {out} ({len(records)} steps, final eval loss {last.eval_loss:.4f})")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    corpus = load_corpus(args.corpus, args.vocab_mode)
    model_cfg = cfg.model_config(corpus.vocab_size)
    tc = _train_config(cfg, model_cfg, args.seed)
    out = Path(args.out)
    manifest = Manifest(out, args.argv, "pretrain", config=cfg.resolved(), seeds={"train": tc.seed},
                        model=model_cfg.to_dict(), corpus=str(args.corpus))
    params = tfm.init_random(model_cfg, make_rng(tc.seed))
    return _run_training(params, corpus, tc, out, manifest, {"steps": 0, "tokens_seen": 0, "flops_cum": 0},
                         args.metrics, False)


def cmd_train(args) -> int:
    params, header = read_checkpoint(args.from_)
    cfg = load_config(args.config)
    if cfg.model:
        want = cfg.model_config(params.config.vocab)
        if want.dtype != params.config.dtype:
            raise ConfigError(f"config dtype {want.dtype} does not match checkpoint dtype {params.config.dtype}")
        if want != params.config:
            raise ConfigError(f"config [model] {want} does not match checkpoint {params.config}")
    tc = _train_config(cfg, params.config, args.seed)
    if tc.dtype != params.config.dtype:
        raise ConfigError(f"train dtype {tc.dtype} does not match checkpoint dtype {params.config.dtype}")
    corpus = load_corpus(args.corpus, args.vocab_mode)
    out = Path(args.out)
    manifest = Manifest(out, args.argv, "train", config=cfg.resolved(), seeds={"train": tc.seed},
                        model=params.config.to_dict(), inputs={str(args.from_): content_hash(args.from_)}, corpus=str(args.corpus))
    return _run_training(params, corpus, tc, out, manifest, _accounting(header), args.metrics, args.append,
                         args.stop_at_loss)


def cmd_grow(args) -> int:
    small, header = read_checkpoint(args.from_)
    cfg = load_config(args.target_config)
    target = cfg.model_config(small.config.vocab)
    if target.dtype != small.config.dtype:
        raise ConfigError(f"target dtype {target.dtype} differs from source dtype {small.config.dtype}")
    gc = cfg.grow_config()
    seed = args.seed if args.seed is not None else gc.seed
    steps = args.ligo_steps if args.ligo_steps is not None else gc.ligo_steps
    init_strategy = args.ligo_init or gc.ligo_init
    opts = {"normalization": gc.normalization, "width": gc.width, "depth": gc.depth}
    spec = GrowthSpec(small.config, target, args.operator, seed, opts)
    if args.operator in ("stack", "interpolate") or \
            (args.operator in ("net2net", "copy") and target.num_layers != small.config.num_layers):
        spec.depth_ratio  # integer-depth constraint, checked before any work
    out = Path(args.out)
    acc = _accounting(header)
    tc = _train_config(cfg, target, None)
    manifest = Manifest(out, args.argv, "grow", operator=args.operator, seeds={"grow": seed},
                        config=cfg.resolved(), model=target.to_dict(), train=tc.to_dict(),
                        grow={**asdict(gc), "seed": seed, "ligo_steps": steps, "ligo_init": init_strategy}, inputs={str(args.from_): content_hash(args.from_)},
                        corpus=str(args.corpus) if args.corpus else None)
    corpus = load_corpus(args.corpus, args.vocab_mode) if args.corpus else None
    meta = {"operator": args.operator, "manifest": manifest.path.name, "source_accounting": acc}
    grow_flops = grow_tokens = 0
    if args.operator == "ligo":
        if steps > 0 and corpus is None:
            raise DataError("--corpus is required for --ligo-steps > 0")
        p0 = ligo_init(init_strategy, small.config, target, make_rng(seed), noise=gc.noise,
                       normalization=gc.normalization)
        ocfg = OptimizerConfig(lr=gc.ligo_lr)
        batches = batch_stream(corpus.train, tc.batch_size, tc.seq_len, make_rng(seed + 1)) if steps else iter(())
        p = ligo_learn(small, p0, batches, steps, ocfg)
        big = ligo_expand(small, p)
        grow_flops = steps * ligo_step_flops(small.config, target, tc.batch_size, tc.seq_len)
        grow_tokens = steps * tc.batch_size * tc.seq_len
        ligo_path = _sibling(out, ".ligo.ckpt")
        save_checkpoint(p, ligo_path, {"manifest": manifest.path.name, "ligo_steps": steps,
                                       "init": init_strategy, "optimizer": ocfg.to_dict()})
        meta.update(ligo_steps=steps, ligo_init=init_strategy, ligo_checkpoint=ligo_path.name)
        manifest.data.update(ligo_steps=steps, ligo_init=init_strategy, ligo_optimizer=ocfg.to_dict(),
                             ligo_batch_size=tc.batch_size)
    else:
        big = grow(small, spec)
    meta["accounting"] = {"steps": 0, "tokens_seen": grow_tokens, "flops_cum": grow_flops}
    step0 = None
    if corpus is not None:
        step0 = tfm.evaluate(big, fixed_eval_batches(corpus, tc))
        meta["step0_eval_loss"] = step0
    if corpus is not None:
        meta["vocab"] = corpus.vocab
    save_checkpoint(big, out, meta)
    manifest.finish(output=str(out), step0_eval_loss=step0, grow_flops=grow_flops,
                    param_count=tfm.param_count(target))
    msg = f"wrote {out} ({args.operator}, {target.num_layers} layers, hidden {target.hidden})"
    if step0 is not None:
        msg += f"; step-0 eval loss {step0:.4f}"
    print(msg)
    return EXIT_OK


def cmd_compare(args) -> int:
    if len(args.runs) < 2:
        print("compare needs at least two runs", file=sys.stderr)
        return EXIT_USAGE
    runs = {}
    for path in args.runs:
        name = Path(path).stem
        if name in runs:
            name = str(path)
        runs[name] = read_metrics_csv(path)
    reference = args.reference or Path(args.runs[0]).stem
    if reference not in runs:
        print(f"unknown reference run {reference!r}", file=sys.stderr)
        return EXIT_USAGE
    report = compare_runs(runs, args.target_loss, reference)
    print(report.format_table())
    if args.out:
        report.write_csv(args.out)
    if args.strict and not report.all_reached:
        missed = ", ".join(r.name for r in report.runs if not r.reached)
        print(f"strict: target not reached by {missed}", file=sys.stderr)
        return EXIT_STRICT
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suite
    results = run_suite(args.suite)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    for r in failed:
        print(f"failed: {r.suite}/{r.name}", file=sys.stderr)
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ligo", description="Grow small transformers into larger ones.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common_train(p):
        p.add_argument("--corpus", required=True, help="text file or synthetic[:seed=N,bytes=M]")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--metrics", type=Path, help="metrics CSV (default <out>.csv)")
        p.add_argument("--vocab-mode", choices=("char", "byte"), default="char")

    p = sub.add_parser("pretrain", help="train a model from scratch")
    p.add_argument("--config", required=True)
    common_train(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="continue training from a checkpoint")
    p.add_argument("--from", dest="from_", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--append", action="store_true", help="append to an existing metrics CSV")
    p.add_argument("--stop-at-loss", type=float, help="stop at the first eval loss at or below this value")
    common_train(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grow", help="grow a checkpoint into a larger model")
    p.add_argument("--from", dest="from_", required=True)
    p.add_argument("--target-config", required=True)
    p.add_argument("--operator", choices=OPERATORS, required=True)
    p.add_argument("--ligo-steps", type=int)
    p.add_argument("--ligo-init", choices=INIT_STRATEGIES)
    p.add_argument("--corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--vocab-mode", choices=("char", "byte"), default="char")
    p.set_defaults(func=cmd_grow)

    p = sub.add_parser("compare", help="FLOPs-to-target savings between metric CSVs")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--target-loss", type=float, required=True)
    p.add_argument("--reference", help="run name (CSV stem) savings are measured against; default first")
    p.add_argument("--out", help="write the report as CSV")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="run the built-in oracle checks")
    p.add_argument("--suite", choices=("algebra", "special-cases", "gradients", "net2net", "all"),
                   default="all")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.argv = ["ligo"] + argv
    try:
        return args.func(args)
    except LigoError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
