#!/usr/bin/env python3
"""Desk-scale growth experiment, one CLI stage at a time.

For each seed, inside ``<workdir>/seed<N>/``:

1. ``ligo pretrain`` the small model        -> small.ckpt, small.csv
2. ``ligo grow`` with every baseline          -> grow_<op>.ckpt (step-0 eval loss in meta)
3. ``ligo grow --operator ligo`` for each LiGO step budget
                                              -> ligo<K>.ckpt, ligo<K>.ligo.ckpt
4. ``ligo pretrain`` the target from scratch  -> scratch.ckpt, scratch.csv
5. ``ligo train`` from the default LiGO checkpoint until it reaches the
   scratch run's final eval loss             -> ligo_train.ckpt, ligo_train.csv
6. ``ligo compare`` the two training CSVs     -> compare.csv

Every artifact stays on disk so any stage can be inspected or rerun by
hand. ``summary.json`` in the workdir collects the numbers.

    python scripts/desk_experiment.py --workdir runs/desk --seeds 0 1 2
    python scripts/desk_experiment.py --workdir runs/tiny --small configs/tiny_small.ini \\
        --target configs/tiny_target.ini --corpus synthetic:seed=0,bytes=20000 --ligo-steps 0 5
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from ligo.checkpoint import read_checkpoint
from ligo.cli import main as ligo
from ligo.config import load_config
from ligo.data import load_corpus
from ligo.linalg import make_rng
from ligo.model import evaluate, init_random
from ligo.trainer import fixed_eval_batches, read_metrics_csv

HERE = Path(__file__).resolve().parent.parent
BASELINES = ("stack", "interpolate", "net2net", "copy")


def _run(*argv):
    rc = ligo([str(a) for a in argv])
    if rc != 0:
        raise RuntimeError(f"ligo {' '.join(map(str, argv))} exited with {rc}")


def _step0(path: Path) -> float:
    return read_checkpoint(path)[1]["meta"]["step0_eval_loss"]


def run_seed(workdir: Path, seed: int, small_cfg, target_cfg, corpus: str,
             ligo_steps=(0, 100, 500), default_ligo=100, baselines=BASELINES) -> dict:
    d = Path(workdir) / f"seed{seed}"
    d.mkdir(parents=True, exist_ok=True)
    common = ["--corpus", corpus, "--seed", seed]

    _run("pretrain", "--config", small_cfg, "--out", d / "small.ckpt", *common)

    step0 = {}
    for op in baselines:
        _run("grow", "--from", d / "small.ckpt", "--target-config", target_cfg, "--operator", op,
             "--out", d / f"grow_{op}.ckpt", *common)
        step0[op] = _step0(d / f"grow_{op}.ckpt")
    ligo_step0 = {}
    for k in ligo_steps:
        _run("grow", "--from", d / "small.ckpt", "--target-config", target_cfg, "--operator", "ligo",
             "--ligo-steps", k, "--out", d / f"ligo{k}.ckpt", *common)
        ligo_step0[k] = _step0(d / f"ligo{k}.ckpt")

    # random-init reference on the same fixed eval batches
    cfg = load_config(target_cfg)
    c = load_corpus(corpus)
    target = cfg.model_config(c.vocab_size)
    random_loss = evaluate(init_random(target, make_rng(seed)),
                           fixed_eval_batches(c, cfg.train_config(seq_len=target.seq_len)))

    _run("pretrain", "--config", target_cfg, "--out", d / "scratch.ckpt", *common)
    scratch = read_metrics_csv(d / "scratch.csv")
    target_loss = scratch[-1].eval_loss

    _run("train", "--from", d / f"ligo{default_ligo}.ckpt", "--config", target_cfg,
         "--out", d / "ligo_train.ckpt", "--stop-at-loss", repr(target_loss), *common)
    _run("compare", "--runs", d / "scratch.csv", d / "ligo_train.csv", "--target-loss", repr(target_loss),
         "--out", d / "compare.csv")
    with open(d / "compare.csv") as f:
        report = {r["run"]: r for r in csv.DictReader(f)}
    lt = report["ligo_train"]
    return {
        "seed": seed,
        "random_init_loss": random_loss,
        "baseline_step0": step0,
        "ligo_step0": {str(k): v for k, v in ligo_step0.items()},
        "target_loss": target_loss,
        "scratch_flops": int(report["scratch"]["flops_to_target"]),
        "ligo_reached": lt["reached"] == "1",
        "ligo_flops": int(lt["flops_to_target"]) if lt["flops_to_target"] else None,
        "ligo_savings_pct": float(lt["flops_savings_pct"]) if lt["flops_savings_pct"] else None,
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--workdir", type=Path, required=True)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--small", default=str(HERE / "configs" / "desk_small.ini"))
    ap.add_argument("--target", default=str(HERE / "configs" / "desk_target.ini"))
    ap.add_argument("--corpus", default="synthetic")
    ap.add_argument("--ligo-steps", type=int, nargs="+", default=[0, 100, 500])
    args = ap.parse_args(argv)
    default = 100 if 100 in args.ligo_steps else args.ligo_steps[-1]
    results = []
    for s in args.seeds:
        r = run_seed(args.workdir, s, args.small, args.target, args.corpus, args.ligo_steps, default)
        results.append(r)
        print(json.dumps(r, indent=2))
    (args.workdir / "summary.json").write_text(json.dumps(results, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
