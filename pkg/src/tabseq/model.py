"""Encoder-decoder transformer with additive row/column input embeddings.

Pre-normalization stack (scale-only RMS norm), bucketed relative position
bias over 1-D token positions, single-ReLU feed-forward blocks, and an
output projection tied to the token embedding. Row and column embeddings
enter the encoder input only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Callable, Sequence

import torch
from torch import Tensor, nn

from .errors import IdOutOfRange, InvalidConfig, LengthExceeded, PadOnlyTarget, ShapeMismatch
from .tokenizer import EOS_ID, PAD_ID, StructuredTokenSequence


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    num_heads: int = 4
    d_ff: int = 128
    num_encoder_layers: int = 2
    num_decoder_layers: int = 2
    vocab_size: int = 512
    max_rows: int = 64
    max_cols: int = 32
    relative_bias_buckets: int = 32
    relative_max_distance: int = 128
    dropout_rate: float = 0.1
    max_seq_len: int = 1024

    def validate(self) -> None:
        positive = ("d_model", "num_heads", "d_ff", "num_encoder_layers", "num_decoder_layers",
                    "vocab_size", "max_rows", "max_cols", "relative_bias_buckets",
                    "relative_max_distance", "max_seq_len")
        for name in positive:
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be positive")
        if self.d_model % self.num_heads:
            raise InvalidConfig(
                f"d_model={self.d_model} is not divisible by num_heads={self.num_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfig(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.relative_bias_buckets < 4:
            raise InvalidConfig("relative_bias_buckets must be at least 4")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in obj:
                kwargs[f.name] = float(obj[f.name]) if f.type == "float" else int(obj[f.name])
        return cls(**kwargs)


# -- building blocks ------------------------------------------------------------

def _dropout(x: Tensor, p: float, gen: torch.Generator | None) -> Tensor:
    if gen is None or p == 0.0:
        return x
    keep = torch.rand(x.shape, generator=gen, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


def relative_position_bucket(
    relative_position: Tensor, bidirectional: bool, num_buckets: int, max_distance: int
) -> Tensor:
    """Map key-minus-query offsets to buckets: exact for small, log-spaced for large."""
    buckets = torch.zeros_like(relative_position)
    if bidirectional:
        num_buckets //= 2
        buckets = buckets + (relative_position > 0).long() * num_buckets
        n = relative_position.abs()
    else:
        n = (-relative_position).clamp(min=0)
    max_exact = num_buckets // 2
    is_small = n < max_exact
    large = max_exact + (
        torch.log(n.float().clamp(min=1) / max_exact)
        / math.log(max_distance / max_exact)
        * (num_buckets - max_exact)
    ).long()
    large = large.clamp(max=num_buckets - 1)
    return buckets + torch.where(is_small, n, large)


class RMSNorm(nn.Module):
    def __init__(self, d: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(d))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.weight


class Attention(nn.Module):
    def __init__(self, cfg: ModelConfig, relative_bias: bool = False, bidirectional: bool = True):
        super().__init__()
        d = cfg.d_model
        self.h = cfg.num_heads
        self.dh = d // cfg.num_heads
        self.q = nn.Linear(d, d, bias=False)
        self.k = nn.Linear(d, d, bias=False)
        self.v = nn.Linear(d, d, bias=False)
        self.o = nn.Linear(d, d, bias=False)
        self.bidirectional = bidirectional
        self.buckets = cfg.relative_bias_buckets
        self.max_distance = cfg.relative_max_distance
        self.relative_bias = nn.Embedding(cfg.relative_bias_buckets, cfg.num_heads) if relative_bias else None

    def position_bias(self, q_len: int, k_len: int) -> Tensor:
        ctx = torch.arange(q_len)[:, None]
        mem = torch.arange(k_len)[None, :]
        b = relative_position_bucket(mem - ctx, self.bidirectional, self.buckets, self.max_distance)
        return self.relative_bias(b).permute(2, 0, 1).unsqueeze(0)  # [1, H, Q, K]

    def forward(self, x: Tensor, kv: Tensor, mask: Tensor | None, bias: Tensor | None,
                return_probs: bool = False):
        B, Q, _ = x.shape
        K = kv.shape[1]
        q = self.q(x).view(B, Q, self.h, self.dh).transpose(1, 2)
        k = self.k(kv).view(B, K, self.h, self.dh).transpose(1, 2)
        v = self.v(kv).view(B, K, self.h, self.dh).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.dh)
        if bias is not None:
            scores = scores + bias
        if mask is not None:
            scores = scores.masked_fill(~mask, torch.finfo(scores.dtype).min)
        probs = torch.softmax(scores, dim=-1)
        out = (probs @ v).transpose(1, 2).reshape(B, Q, -1)
        out = self.o(out)
        return (out, probs) if return_probs else out


class FeedForward(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.wi = nn.Linear(cfg.d_model, cfg.d_ff, bias=False)
        self.wo = nn.Linear(cfg.d_ff, cfg.d_model, bias=False)
        self.p = cfg.dropout_rate

    def forward(self, x: Tensor, gen) -> Tensor:
        return self.wo(_dropout(torch.relu(self.wi(x)), self.p, gen))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig, first: bool):
        super().__init__()
        self.attn_norm = RMSNorm(cfg.d_model)
        self.attn = Attention(cfg, relative_bias=first, bidirectional=True)
        self.ff_norm = RMSNorm(cfg.d_model)
        self.ff = FeedForward(cfg)
        self.p = cfg.dropout_rate

    def forward(self, x, mask, bias, gen):
        h = self.attn_norm(x)
        x = x + _dropout(self.attn(h, h, mask, bias), self.p, gen)
        return x + _dropout(self.ff(self.ff_norm(x), gen), self.p, gen)


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig, first: bool):
        super().__init__()
        self.self_norm = RMSNorm(cfg.d_model)
        self.self_attn = Attention(cfg, relative_bias=first, bidirectional=False)
        self.cross_norm = RMSNorm(cfg.d_model)
        self.cross_attn = Attention(cfg)
        self.ff_norm = RMSNorm(cfg.d_model)
        self.ff = FeedForward(cfg)
        self.p = cfg.dropout_rate

    def forward(self, y, enc, self_mask, bias, cross_mask, gen):
        h = self.self_norm(y)
        y = y + _dropout(self.self_attn(h, h, self_mask, bias), self.p, gen)
        y = y + _dropout(self.cross_attn(self.cross_norm(y), enc, cross_mask, None), self.p, gen)
        return y + _dropout(self.ff(self.ff_norm(y), gen), self.p, gen)


class TableSeq2Seq(nn.Module):
    """The full model; its tensors are the trainable parameters."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.config = cfg
        self.dropout_rate = cfg.dropout_rate
        d = cfg.d_model
        self.token_embedding = nn.Embedding(cfg.vocab_size, d)
        self.row_embedding = nn.Embedding(cfg.max_rows + 1, d)
        self.col_embedding = nn.Embedding(cfg.max_cols + 1, d)
        self.encoder = nn.ModuleList(
            EncoderLayer(cfg, i == 0) for i in range(cfg.num_encoder_layers)
        )
        self.encoder_norm = RMSNorm(d)
        self.decoder = nn.ModuleList(
            DecoderLayer(cfg, i == 0) for i in range(cfg.num_decoder_layers)
        )
        self.decoder_norm = RMSNorm(d)

    # -- pieces -------------------------------------------------------------
    def embed_inputs(self, token_ids: Tensor, row_ids: Tensor, col_ids: Tensor) -> Tensor:
        cfg = self.config
        for name, ids, bound in (("token", token_ids, cfg.vocab_size),
                                 ("row", row_ids, cfg.max_rows + 1),
                                 ("col", col_ids, cfg.max_cols + 1)):
            if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= bound):
                raise IdOutOfRange(f"{name} id outside [0, {bound})")
        return (self.token_embedding(token_ids) + self.row_embedding(row_ids)
                + self.col_embedding(col_ids))

    def encode(self, token_ids, row_ids, col_ids, input_mask, gen=None) -> Tensor:
        x = _dropout(self.embed_inputs(token_ids, row_ids, col_ids), self.dropout_rate, gen)
        L = x.shape[1]
        bias = self.encoder[0].attn.position_bias(L, L)
        mask = input_mask[:, None, None, :]
        for layer in self.encoder:
            x = layer(x, mask, bias, gen)
        return _dropout(self.encoder_norm(x), self.dropout_rate, gen)

    def decode(self, enc: Tensor, input_mask: Tensor, decoder_input_ids: Tensor, gen=None) -> Tensor:
        cfg = self.config
        if decoder_input_ids.numel() and int(decoder_input_ids.max()) >= cfg.vocab_size:
            raise IdOutOfRange("decoder id outside the vocabulary")
        y = _dropout(self.token_embedding(decoder_input_ids), self.dropout_rate, gen)
        T = y.shape[1]
        bias = self.decoder[0].self_attn.position_bias(T, T)
        causal = torch.ones(T, T, dtype=torch.bool).tril()[None, None]
        cross = input_mask[:, None, None, :]
        for layer in self.decoder:
            y = layer(y, enc, causal, bias, cross, gen)
        y = _dropout(self.decoder_norm(y), self.dropout_rate, gen)
        return y @ self.token_embedding.weight.t() * (cfg.d_model ** -0.5)

    def forward(self, token_ids, row_ids, col_ids, input_mask, target_ids,
                gen: torch.Generator | None = None) -> Tensor:
        """Teacher-forced logits ``[B, T, V]``; ``gen`` switches dropout on."""
        cfg = self.config
        if token_ids.shape[1] > cfg.max_seq_len or target_ids.shape[1] > cfg.max_seq_len:
            raise LengthExceeded(f"sequence longer than max_seq_len={cfg.max_seq_len}")
        enc = self.encode(token_ids, row_ids, col_ids, input_mask, gen)
        return self.decode(enc, input_mask, shift_right(target_ids), gen)


def set_dropout_rate(model: TableSeq2Seq, rate: float) -> None:
    if not 0.0 <= rate < 1.0:
        raise InvalidConfig(f"dropout_rate must lie in [0, 1), got {rate}")
    model.dropout_rate = rate
    for m in model.modules():
        if hasattr(m, "p"):
            m.p = rate


def shift_right(target_ids: Tensor) -> Tensor:
    start = torch.full_like(target_ids[:, :1], PAD_ID)
    return torch.cat([start, target_ids[:, :-1]], dim=1)


# -- functional surface ------------------------------------------------------------

def init(config: ModelConfig, rng_seed: int = 0, dtype: torch.dtype = torch.float32) -> TableSeq2Seq:
    """Fresh parameters: N(0, 1) embeddings, N(0, 1/d_model) projections, unit norm scales."""
    config.validate()
    model = TableSeq2Seq(config)
    gen = torch.Generator().manual_seed(rng_seed)
    std = config.d_model ** -0.5
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("norm.weight"):
                p.fill_(1.0)
            elif name.split(".")[0] in ("token_embedding", "row_embedding", "col_embedding"):
                p.copy_(torch.randn(p.shape, generator=gen))
            else:
                p.copy_(torch.randn(p.shape, generator=gen) * std)
    return model.to(dtype)


def _param_dtype(model: nn.Module) -> torch.dtype:
    return model.token_embedding.weight.dtype


def _seq_tensors(seq: StructuredTokenSequence):
    tok = torch.tensor([seq.token_ids], dtype=torch.long)
    row = torch.tensor([seq.row_ids], dtype=torch.long)
    col = torch.tensor([seq.col_ids], dtype=torch.long)
    return tok, row, col, torch.ones_like(tok, dtype=torch.bool)


def embed_inputs(model: TableSeq2Seq, seq: StructuredTokenSequence) -> Tensor:
    tok, row, col, _ = _seq_tensors(seq)
    return model.embed_inputs(tok, row, col)[0]


def forward(model: TableSeq2Seq, seq: StructuredTokenSequence, target_ids: Sequence[int],
            train_mode: bool = False, rng_seed: int = 0) -> Tensor:
    """Logits ``[len(target_ids), vocab_size]`` for one example."""
    tok, row, col, mask = _seq_tensors(seq)
    tgt = torch.tensor([list(target_ids)], dtype=torch.long)
    gen = torch.Generator().manual_seed(rng_seed) if train_mode else None
    return model(tok, row, col, mask, tgt, gen)[0]


def loss(logits: Tensor, target_ids) -> Tensor:
    """Mean negative log-likelihood of the reference tokens over non-pad positions."""
    target = torch.as_tensor(target_ids, dtype=torch.long)
    if logits.shape[:-1] != target.shape:
        raise ShapeMismatch(f"logits {tuple(logits.shape)} vs targets {tuple(target.shape)}")
    keep = target != PAD_ID
    if not bool(keep.any()):
        raise PadOnlyTarget("target contains only padding")
    logp = torch.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, target.unsqueeze(-1)).squeeze(-1)
    return nll[keep].mean()


@dataclass(frozen=True)
class DecodeResult:
    sequences: list[list[int]]
    scores: list[float]


StepFn = Callable[[list[tuple[int, ...]]], Tensor]


def beam_search(step_fn: StepFn, beam_size: int, max_len: int, eos_id: int = EOS_ID) -> DecodeResult:
    """Beam search ranked by mean token log-probability.

    ``step_fn`` maps a list of generated prefixes to next-token log-probs
    ``[len(prefixes), V]``. Candidates are ordered by cumulative log-prob,
    ties going to the earlier hypothesis and then the lower token id; the
    top ``beam_size`` survive, and those ending in eos retire. Search stops
    once ``beam_size`` hypotheses have retired, none are left, or
    ``max_len`` tokens have been generated.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    done: list[tuple[tuple[int, ...], float]] = []
    for _ in range(max_len):
        logp = step_fn([seq for seq, _ in live]).double()
        cum = logp + torch.tensor([s for _, s in live], dtype=torch.float64)[:, None]
        flat = cum.reshape(-1)
        order = torch.argsort(-flat, stable=True)[:beam_size]
        V = logp.shape[1]
        nxt = []
        for idx in order.tolist():
            h, v = divmod(idx, V)
            cand = (live[h][0] + (v,), float(flat[idx]))
            (done if v == eos_id else nxt).append(cand)
        live = nxt
        if not live or len(done) >= beam_size:
            break
    pool = done + live
    ranked = sorted(
        ((seq, score / len(seq)) for seq, score in pool), key=lambda t: -t[1]
    )[:beam_size]
    return DecodeResult([list(s) for s, _ in ranked], [sc for _, sc in ranked])


class _Stepper:
    """Runs the decoder over full prefixes against a cached encoding."""

    def __init__(self, model: TableSeq2Seq, seq: StructuredTokenSequence):
        self.model = model
        tok, row, col, mask = _seq_tensors(seq)
        if tok.shape[1] > model.config.max_seq_len:
            raise LengthExceeded(f"input longer than max_seq_len={model.config.max_seq_len}")
        with torch.no_grad():
            self.enc = model.encode(tok, row, col, mask)
        self.mask = mask

    @torch.no_grad()
    def __call__(self, prefixes: list[tuple[int, ...]]) -> Tensor:
        n = len(prefixes)
        dec_in = torch.tensor([(PAD_ID,) + p for p in prefixes], dtype=torch.long)
        enc = self.enc.expand(n, -1, -1)
        mask = self.mask.expand(n, -1)
        logits = self.model.decode(enc, mask, dec_in)[:, -1, :]
        return torch.log_softmax(logits.double(), dim=-1)


def decode_greedy(model: TableSeq2Seq, seq: StructuredTokenSequence, max_len: int) -> DecodeResult:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    step = _Stepper(model, seq)
    out: list[int] = []
    total = 0.0
    for _ in range(max_len):
        logp = step([tuple(out)])[0]
        v = int(torch.argmax(logp))  # first maximal index on ties
        total += float(logp[v])
        out.append(v)
        if v == EOS_ID:
            break
    return DecodeResult([out], [total / len(out)])


def decode_beam(model: TableSeq2Seq, seq: StructuredTokenSequence, beam_size: int,
                max_len: int) -> DecodeResult:
    return beam_search(_Stepper(model, seq), beam_size, max_len)


@torch.no_grad()
def greedy_batch(model: TableSeq2Seq, batch, max_len: int) -> list[list[int]]:
    """Greedy decoding of a padded batch; sequences stop at eos."""
    enc = model.encode(batch.token_ids, batch.row_ids, batch.col_ids, batch.input_mask)
    B = enc.shape[0]
    dec = torch.full((B, 1), PAD_ID, dtype=torch.long)
    finished = torch.zeros(B, dtype=torch.bool)
    for _ in range(max_len):
        logits = model.decode(enc, batch.input_mask, dec)[:, -1, :]
        nxt = torch.argmax(logits, dim=-1)
        nxt = torch.where(finished, torch.full_like(nxt, PAD_ID), nxt)
        dec = torch.cat([dec, nxt[:, None]], dim=1)
        finished |= nxt == EOS_ID
        if bool(finished.all()):
            break
    out = []
    for row in dec[:, 1:].tolist():
        seq = []
        for t in row:
            seq.append(t)
            if t == EOS_ID:
                break
        out.append(seq)
    return out


def strip_eos(ids: Sequence[int]) -> list[int]:
    out = []
    for t in ids:
        if t == EOS_ID:
            break
        out.append(t)
    return out
