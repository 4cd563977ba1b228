import csv
import math
from collections import Counter
from dataclasses import replace

import pytest
import torch

from tabseq import synthetic as S
from tabseq.errors import InvalidConfig, NonFiniteLoss
from tabseq.model import ModelConfig, forward, init
from tabseq.tasks import make_qa_example
from tabseq.trainer import (
    LRSchedule,
    TrainConfig,
    collate,
    learning_rate_at,
    make_batches,
    train,
)
from tabseq.tokenizer import PAD_ID

MCFG = ModelConfig(d_model=16, num_heads=2, d_ff=32, vocab_size=303, max_rows=8, max_cols=8,
                   relative_bias_buckets=8, dropout_rate=0.0)


@pytest.fixture(scope="module")
def dataset(vocab):
    return [make_qa_example(d, q, [a], vocab) for d, q, a in S.lookup_tasks(10, seed=0)]


def test_invalid_configs():
    for bad in (dict(steps=0), dict(learning_rate=0.0), dict(max_input_len=0),
                dict(batch_size=0), dict(dropout_rate=1.0)):
        with pytest.raises(InvalidConfig):
            TrainConfig(**bad).validate()


def test_from_dict_types():
    cfg = TrainConfig.from_dict({"steps": "5", "learning_rate": "0.5", "lr_schedule": "InverseSqrt"})
    assert cfg.steps == 5 and cfg.learning_rate == 0.5 and cfg.lr_schedule is LRSchedule.InverseSqrt
    with pytest.raises(InvalidConfig):
        TrainConfig.from_dict({"lr_schedule": "Cosine"})


def test_learning_rate_schedules():
    const = TrainConfig(learning_rate=1e-4)
    assert learning_rate_at(const, 1) == learning_rate_at(const, 5000) == 1e-4
    inv = TrainConfig(learning_rate=1e-3, lr_schedule=LRSchedule.InverseSqrt, warmup_steps=100)
    assert math.isclose(learning_rate_at(inv, 50), 5e-4)
    assert math.isclose(learning_rate_at(inv, 100), 1e-3)
    assert math.isclose(learning_rate_at(inv, 400), 5e-4)


def test_batches_partition(dataset):
    batches = make_batches(dataset, 4, seed=0, epoch=0)
    assert [len(b) for b in batches] == [4, 4, 2]
    ids = Counter(i for b in batches for i in b.ids)
    assert ids == Counter(ex.id for ex in dataset)
    again = make_batches(dataset, 4, seed=0, epoch=0)
    assert [b.ids for b in again] == [b.ids for b in batches]
    other = make_batches(dataset, 4, seed=0, epoch=1)
    assert [b.ids for b in other] != [b.ids for b in batches]


def test_padding_is_masked(dataset):
    b = collate(dataset[:3])
    lengths = [ex.input.length for ex in dataset[:3]]
    assert b.token_ids.shape[1] == max(lengths)
    for i, n in enumerate(lengths):
        assert bool(b.input_mask[i, :n].all()) and not bool(b.input_mask[i, n:].any())
        t = len(dataset[i].target)
        assert bool((b.target_ids[i, t:] == PAD_ID).all())


def test_runs_exact_steps_and_logs(tmp_path, dataset):
    cfg = TrainConfig(steps=7, batch_size=4, learning_rate=1e-3, eval_every=3)
    calls = []
    model = init(MCFG, 0)
    path = tmp_path / "log.csv"
    _, log = train(model, dataset, cfg, eval_fn=lambda m, s: calls.append(s) or 0.5, log_path=path)
    assert len(log.records) == 7 and calls == [3, 6]
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["step", "loss", "lr", "eval_metric"]
    assert [r[0] for r in rows[1:]] == [str(i) for i in range(1, 8)]
    assert rows[3][3] == "0.5" and rows[1][3] == ""


def test_same_seed_is_bit_identical(dataset):
    cfg = TrainConfig(steps=6, batch_size=3, learning_rate=1e-3, dropout_rate=0.1, seed=4)
    a = train(init(MCFG, 0, torch.float64), dataset, cfg)[1].losses
    b = train(init(MCFG, 0, torch.float64), dataset, cfg)[1].losses
    assert a == b
    assert all(isinstance(x, float) for x in a)


def test_dropout_changes_training_but_not_eval(dataset):
    base = TrainConfig(steps=4, batch_size=4, learning_rate=1e-3, seed=1, dropout_rate=0.0)
    plain = train(init(MCFG, 0, torch.float64), dataset, base)
    drop = train(init(MCFG, 0, torch.float64), dataset, replace(base, dropout_rate=0.2))
    assert plain[1].losses != drop[1].losses
    m = drop[0]
    ex = dataset[0]
    assert torch.equal(forward(m, ex.input, ex.target), forward(m, ex.input, ex.target))


def test_loss_decreases(dataset):
    cfg = TrainConfig(steps=60, batch_size=5, learning_rate=3e-3, dropout_rate=0.0)
    losses = train(init(MCFG, 0), dataset, cfg)[1].losses
    assert sum(losses[-10:]) < sum(losses[:10])


def test_non_finite_loss(dataset):
    model = init(MCFG, 0)
    with torch.no_grad():
        model.token_embedding.weight[5, 0] = float("nan")
    with pytest.raises(NonFiniteLoss) as err:
        train(model, dataset, TrainConfig(steps=3, batch_size=10))
    assert err.value.step == 1


def test_empty_dataset():
    with pytest.raises(ValueError):
        train(init(MCFG, 0), [], TrainConfig(steps=1))
