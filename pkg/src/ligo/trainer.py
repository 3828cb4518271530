"""Training loop, FLOPs accounting, metrics CSV and run comparison."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import model as tfm
from .data import Corpus, batch_stream, eval_batches
from .errors import ConfigError, DataError, DivergenceError
from .linalg import make_rng
from .model import ParamSet
from .optim import OptimizerConfig, make_optimizer

log = logging.getLogger(__name__)

CSV_HEADER = ("step", "tokens_seen", "flops_cum", "wall_s", "train_loss", "eval_loss")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 16
    seq_len: int = 64
    optimizer: str = "adam"
    lr: float = 1e-3
    warmup_steps: int = 50
    eval_every: int = 50
    eval_batches: int = 8
    seed: int = 0
    dtype: str = "float32"
    deterministic: bool = False   # record wall_s as 0 so CSVs are byte-reproducible

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.batch_size < 1 or self.seq_len < 1 or self.eval_batches < 1:
            raise ConfigError("batch_size, seq_len and eval_batches must be >= 1")
        if self.dtype not in tfm.DTYPES:
            raise ConfigError(f"unknown dtype {self.dtype!r}")

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(name="adam" if self.optimizer in ("adam", "adaptive_moment") else self.optimizer,
                               lr=self.lr, warmup_steps=self.warmup_steps)

    def to_dict(self):
        return asdict(self)


@dataclass
class MetricsRecord:
    step: int
    tokens_seen: int
    flops_cum: int
    wall_s: float
    train_loss: float
    eval_loss: Optional[float] = None


def fixed_eval_batches(corpus: Corpus, cfg: TrainConfig):
    return eval_batches(corpus.eval, cfg.batch_size, cfg.seq_len, cfg.eval_batches)


def train(params: ParamSet, corpus: Corpus, cfg: TrainConfig, *,
          flops_offset: int = 0, tokens_offset: int = 0, step_offset: int = 0,
          stop_at_eval_loss: Optional[float] = None,
          on_record: Optional[Callable[[MetricsRecord], None]] = None) -> Tuple[ParamSet, List[MetricsRecord]]:
    """Train ``params`` (copied, never mutated) and return the result with its metrics.

    One record per step; ``eval_loss`` is filled every ``eval_every`` steps
    and on the final step. The offsets let a run continue the accounting of
    an earlier phase. Training stops early once an eval loss reaches
    ``stop_at_eval_loss``.
    """
    if corpus.vocab_size > params.config.vocab:
        raise DataError(f"corpus vocabulary ({corpus.vocab_size}) exceeds model vocab ({params.config.vocab})")
    if cfg.seq_len > params.config.seq_len:
        raise ConfigError(f"train seq_len {cfg.seq_len} exceeds model seq_len {params.config.seq_len}")
    if params.config.dtype != cfg.dtype:
        raise ConfigError(f"checkpoint dtype {params.config.dtype} does not match train dtype {cfg.dtype}")
    params = params.copy()
    opt = make_optimizer(cfg.optimizer_config(), params.tensors)
    rng = make_rng(cfg.seed)
    stream = batch_stream(corpus.train, cfg.batch_size, cfg.seq_len, rng)
    evals = fixed_eval_batches(corpus, cfg)
    step_flops = tfm.flops_per_step(params.config, cfg.batch_size, cfg.seq_len)
    step_tokens = cfg.batch_size * cfg.seq_len
    t0 = time.perf_counter()
    records: List[MetricsRecord] = []
    for step in range(1, cfg.steps + 1):
        x, y = next(stream)
        loss, grads = tfm.grad(params, x, y)
        rec = MetricsRecord(step_offset + step, tokens_offset + step * step_tokens,
                            flops_offset + step * step_flops,
                            0.0 if cfg.deterministic else time.perf_counter() - t0, loss)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite train loss at step {rec.step}", rec)
        opt.step(grads, step)
        if step % cfg.eval_every == 0 or step == cfg.steps:
            rec.eval_loss = tfm.evaluate(params, evals)
            if not math.isfinite(rec.eval_loss):
                raise DivergenceError(f"non-finite eval loss at step {rec.step}", rec)
            log.info("step %d train %.4f eval %.4f", rec.step, loss, rec.eval_loss)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        if stop_at_eval_loss is not None and rec.eval_loss is not None and rec.eval_loss <= stop_at_eval_loss:
            break
    return params, records


# ---------------------------------------------------------------- CSV

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_metrics_csv(path, records: Sequence[MetricsRecord], append: bool = False):
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "w" if new else "a", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        if new:
            w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])


def read_metrics_csv(path) -> List[MetricsRecord]:
    path = Path(path)
    try:
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise DataError(f"cannot read metrics {path}: {e}") from None
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise DataError(f"{path}: header must be {','.join(CSV_HEADER)}")
    out = []
    for row in rows[1:]:
        try:
            out.append(MetricsRecord(int(row[0]), int(row[1]), int(row[2]), float(row[3]),
                                     float(row[4]), float(row[5]) if row[5] else None))
        except (ValueError, IndexError) as e:
            raise DataError(f"{path}: malformed row {row}: {e}") from None
    return out


# ---------------------------------------------------------------- comparison

@dataclass
class RunSavings:
    name: str
    reached: bool
    step: Optional[int] = None
    flops_to_target: Optional[int] = None
    wall_to_target: Optional[float] = None
    flops_savings: Optional[float] = None   # percent
    wall_savings: Optional[float] = None    # percent


@dataclass
class SavingsReport:
    target_loss: float
    reference: str
    runs: List[RunSavings] = field(default_factory=list)

    @property
    def all_reached(self) -> bool:
        return all(r.reached for r in self.runs)

    def by_name(self) -> Dict[str, RunSavings]:
        return {r.name: r for r in self.runs}

    def format_table(self) -> str:
        lines = [f"target eval loss {self.target_loss:g} (reference: {self.reference})",
                 f"{'run':<24}{'reached':>8}{'step':>8}{'flops_to_target':>18}{'flops_savings':>15}"
                 f"{'wall_savings':>14}"]
        for r in self.runs:
            pct = lambda v: "-" if v is None else f"{v:.1f}%"
            lines.append(f"{r.name:<24}{('yes' if r.reached else 'NO'):>8}"
                         f"{(r.step if r.step is not None else '-'):>8}"
                         f"{(r.flops_to_target if r.flops_to_target is not None else '-'):>18}"
                         f"{pct(r.flops_savings):>15}{pct(r.wall_savings):>14}")
        return "\n".join(lines)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["run", "reached", "step", "flops_to_target", "wall_to_target",
                        "flops_savings_pct", "wall_savings_pct"])
            for r in self.runs:
                w.writerow([r.name, int(r.reached), _fmt(r.step), _fmt(r.flops_to_target),
                            _fmt(r.wall_to_target), _fmt(r.flops_savings), _fmt(r.wall_savings)])


def first_crossing(records: Sequence[MetricsRecord], target_loss: float) -> Optional[MetricsRecord]:
    for r in records:
        if r.eval_loss is not None and r.eval_loss <= target_loss:
            return r
    return None


def compare_runs(runs: Mapping[str, Sequence[MetricsRecord]], target_loss: float,
                 reference: Optional[str] = None) -> SavingsReport:
    """Savings of each run relative to ``reference`` (default: first run, usually scratch).

    savings = 1 - cost_to_target(run) / cost_to_target(reference), in
    percent. Runs that never reach the target are flagged and get no
    savings figure. If the reference itself never reaches the target no
    run gets a savings figure.
    """
    if not runs:
        raise ValueError("no runs to compare")
    reference = reference if reference is not None else next(iter(runs))
    if reference not in runs:
        raise ValueError(f"reference run {reference!r} not among {list(runs)}")
    ref = first_crossing(runs[reference], target_loss)
    report = SavingsReport(target_loss, reference)
    for name in sorted(runs):
        hit = first_crossing(runs[name], target_loss)
        if hit is None:
            report.runs.append(RunSavings(name, False))
            continue
        rs = RunSavings(name, True, hit.step, hit.flops_cum, hit.wall_s)
        if ref is not None:
            rs.flops_savings = 100.0 * (1.0 - hit.flops_cum / ref.flops_cum)
            if ref.wall_s > 0:
                rs.wall_savings = 100.0 * (1.0 - hit.wall_s / ref.wall_s)
        report.runs.append(rs)
    return report
