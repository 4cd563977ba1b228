"""Deterministic training loop: seeded batching, Adam, LR schedules, CSV log."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np
import torch

from .errors import InvalidConfig, NonFiniteLoss
from .model import TableSeq2Seq, loss as sequence_loss, set_dropout_rate
from .pretrain_data import Example
from .tokenizer import EOS_ID, PAD_ID, StructuredTokenSequence


class LRSchedule(enum.Enum):
    Constant = "Constant"
    InverseSqrt = "InverseSqrt"


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 8
    learning_rate: float = 1e-4
    lr_schedule: LRSchedule = LRSchedule.Constant
    warmup_steps: int = 1000
    dropout_rate: float = 0.1
    eval_every: int = 100
    seed: int = 0
    max_input_len: int = 256
    max_target_len: int = 64
    grad_clip: float = 1.0

    def validate(self) -> None:
        if self.steps < 1:
            raise InvalidConfig("steps must be >= 1")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be > 0")
        if self.max_input_len < 1 or self.max_target_len < 1:
            raise InvalidConfig("max lengths must be >= 1")
        if self.eval_every < 1:
            raise InvalidConfig("eval_every must be >= 1")
        if self.warmup_steps < 1:
            raise InvalidConfig("warmup_steps must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfig("dropout_rate must lie in [0, 1)")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in obj:
                continue
            v = obj[f.name]
            if f.name == "lr_schedule":
                try:
                    kwargs[f.name] = LRSchedule(v)
                except ValueError:
                    raise InvalidConfig(f"unknown lr_schedule {v!r}") from None
            elif f.type == "float":
                kwargs[f.name] = float(v)
            else:
                kwargs[f.name] = int(v)
        return cls(**kwargs)


def learning_rate_at(config: TrainConfig, step: int) -> float:
    """Rate for 1-based ``step``; InverseSqrt warms up linearly, then decays as 1/sqrt."""
    if config.lr_schedule is LRSchedule.Constant:
        return config.learning_rate
    w = config.warmup_steps
    return config.learning_rate * min(step / w, math.sqrt(w / step))


@dataclass
class Batch:
    ids: list[str]
    token_ids: torch.Tensor
    type_ids: torch.Tensor
    row_ids: torch.Tensor
    col_ids: torch.Tensor
    input_mask: torch.Tensor
    target_ids: torch.Tensor

    def __len__(self) -> int:
        return len(self.ids)


def _clip_target(target: Sequence[int], max_len: int | None) -> list[int]:
    t = list(target)
    if max_len is not None and len(t) > max_len:
        t = t[: max_len - 1] + [EOS_ID]
    return t


def collate(examples: Sequence[Example], max_input_len: int | None = None,
            max_target_len: int | None = None) -> Batch:
    """Pad a list of examples to the longest input and target in the list."""
    inputs: list[StructuredTokenSequence] = [
        ex.input.truncated(max_input_len) if max_input_len else ex.input for ex in examples
    ]
    targets = [_clip_target(ex.target, max_target_len) for ex in examples]
    L = max(s.length for s in inputs)
    T = max(1, max(len(t) for t in targets))
    B = len(examples)
    arrays = {k: np.zeros((B, L), dtype=np.int64) for k in ("tok", "typ", "row", "col")}
    mask = np.zeros((B, L), dtype=bool)
    tgt = np.full((B, T), PAD_ID, dtype=np.int64)
    for i, (s, t) in enumerate(zip(inputs, targets)):
        n = s.length
        arrays["tok"][i, :n] = s.token_ids
        arrays["typ"][i, :n] = s.type_ids
        arrays["row"][i, :n] = s.row_ids
        arrays["col"][i, :n] = s.col_ids
        mask[i, :n] = True
        tgt[i, : len(t)] = t
    return Batch(
        [ex.id for ex in examples],
        torch.from_numpy(arrays["tok"]),
        torch.from_numpy(arrays["typ"]),
        torch.from_numpy(arrays["row"]),
        torch.from_numpy(arrays["col"]),
        torch.from_numpy(mask),
        torch.from_numpy(tgt),
    )


def epoch_order(n: int, seed: int, epoch: int) -> list[int]:
    return np.random.default_rng([seed, epoch]).permutation(n).tolist()


def make_batches(dataset: Sequence[Example], batch_size: int, seed: int, epoch: int,
                 max_input_len: int | None = None,
                 max_target_len: int | None = None) -> list[Batch]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = epoch_order(len(dataset), seed, epoch)
    return [
        collate([dataset[i] for i in order[k : k + batch_size]], max_input_len, max_target_len)
        for k in range(0, len(order), batch_size)
    ]


@dataclass
class StepRecord:
    step: int
    loss: float
    lr: float
    eval_metric: float | None = None


@dataclass
class TrainLog:
    records: list[StepRecord] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    @property
    def evals(self) -> list[tuple[int, float]]:
        return [(r.step, r.eval_metric) for r in self.records if r.eval_metric is not None]


EvalFn = Callable[[TableSeq2Seq, int], float]


def _dropout_generator(seed: int, step: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(np.random.SeedSequence([seed, step]).generate_state(1)[0]))


def train(model: TableSeq2Seq, dataset: Sequence[Example], config: TrainConfig,
          eval_fn: EvalFn | None = None, log_path=None) -> tuple[TableSeq2Seq, TrainLog]:
    """Run exactly ``config.steps`` Adam updates on ``model`` (updated in place).

    Batches cycle through seeded per-epoch shuffles; dropout masks derive
    from (seed, step). ``eval_fn`` runs every ``eval_every`` steps and its
    value lands in the log's ``eval_metric`` column.
    """
    config.validate()
    if not dataset:
        raise ValueError("dataset is empty")
    set_dropout_rate(model, config.dropout_rate)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=config.learning_rate, betas=(0.9, 0.999), eps=1e-8,
                           weight_decay=0.0)
    log = TrainLog()
    writer = fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr", "eval_metric"])
    try:
        epoch, batches, cursor = 0, [], 0
        for step in range(1, config.steps + 1):
            if cursor >= len(batches):
                batches = make_batches(dataset, config.batch_size, config.seed, epoch,
                                       config.max_input_len, config.max_target_len)
                epoch, cursor = epoch + 1, 0
            batch = batches[cursor]
            cursor += 1
            lr = learning_rate_at(config, step)
            for g in opt.param_groups:
                g["lr"] = lr
            model.train()
            gen = _dropout_generator(config.seed, step) if config.dropout_rate > 0 else None
            logits = model(batch.token_ids, batch.row_ids, batch.col_ids, batch.input_mask,
                           batch.target_ids, gen)
            value = sequence_loss(logits, batch.target_ids)
            lv = float(value.detach())
            if not math.isfinite(lv):
                raise NonFiniteLoss(step, lv)
            opt.zero_grad(set_to_none=True)
            value.backward()
            if config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
            opt.step()
            rec = StepRecord(step, lv, lr)
            if step % config.eval_every == 0:
                if eval_fn is not None:
                    model.eval()
                    rec.eval_metric = float(eval_fn(model, step))
            log.records.append(rec)
            if writer is not None:
                writer.writerow([step, repr(lv), repr(lr),
                                 "" if rec.eval_metric is None else repr(rec.eval_metric)])
                if step % config.eval_every == 0:
                    fh.flush()
    finally:
        if fh is not None:
            fh.close()
        model.eval()
    return model, log
