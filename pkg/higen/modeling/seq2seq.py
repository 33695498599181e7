"""
Compact encoder-decoder transformer with a tied LM head and the two
projection heads (text and label name) of the joint embedding space.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Collection, List, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from higen.config import ModelConfig

logger = logging.getLogger(__name__)

# maps the generated prefix of one row (after <s>) to its admissible next ids
ConstraintFn = Callable[[Sequence[int]], Collection[int]]


class ModelError(RuntimeError):
    pass


class SequenceTooLong(ModelError):
    pass


class EmptyInput(ModelError):
    pass


@dataclass
class EncoderOutput:
    hidden: torch.Tensor  # (B, S, d)
    pad_mask: torch.Tensor  # (B, S), True on <pad>
    pooled: torch.Tensor  # (B, d)


@dataclass
class DistributionTrace:
    logits: torch.Tensor  # (B, T, V)
    gold: torch.Tensor  # (B, T)
    node_mask: torch.Tensor  # (B, T), gold token is a taxonomy node
    pad_mask: torch.Tensor  # (B, T), gold token is <pad>

    @property
    def probs(self) -> torch.Tensor:
        return self.logits.softmax(dim=-1)


@dataclass
class Generation:
    ids: List[List[int]]
    step_log_probs: List[List[float]]


class SinusoidalPositions(nn.Module):
    def __init__(self, d_model: int, max_len: int) -> None:
        super().__init__()
        pe = torch.zeros(max_len, d_model)
        position = torch.arange(0, max_len, dtype=torch.float).unsqueeze(1)
        div_term = torch.exp(torch.arange(0, d_model, 2).float() * (-math.log(10000.0) / d_model))
        pe[:, 0::2] = torch.sin(position * div_term)
        pe[:, 1::2] = torch.cos(position * div_term)[:, : d_model // 2]
        self.register_buffer("pe", pe, persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.pe[: x.size(1)].to(x.dtype)


class LearnedPositions(nn.Module):
    def __init__(self, d_model: int, max_len: int) -> None:
        super().__init__()
        self.table = nn.Embedding(max_len, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        idx = torch.arange(x.size(1), device=x.device)
        return x + self.table(idx)


def projection_head(cfg: ModelConfig) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(cfg.d_model, cfg.proj_hidden),
        nn.Tanh(),
        nn.Linear(cfg.proj_hidden, cfg.proj_dim),
    )


class HiGenSeq2Seq(nn.Module):
    def __init__(self, cfg: ModelConfig, pad_id: int, bos_id: int, eos_id: int) -> None:
        super().__init__()
        if cfg.vocab_size <= 0:
            raise ModelError("model.vocab_size must be set from the vocabulary before building the model")
        self.cfg = cfg
        self.pad_id, self.bos_id, self.eos_id = pad_id, bos_id, eos_id
        d = cfg.d_model

        self.embed = nn.Embedding(cfg.vocab_size, d, padding_idx=pad_id)
        nn.init.normal_(self.embed.weight, std=d ** -0.5)
        with torch.no_grad():
            self.embed.weight[pad_id].zero_()
        positions = SinusoidalPositions if cfg.positions == "sinusoidal" else LearnedPositions
        self.positions = positions(d, cfg.max_len)
        self.dropout = nn.Dropout(cfg.dropout)

        enc_layer = nn.TransformerEncoderLayer(
            d, cfg.n_heads, cfg.ffn, cfg.dropout, batch_first=True, norm_first=cfg.norm_first
        )
        self.encoder = nn.TransformerEncoder(
            enc_layer, cfg.n_layers, norm=nn.LayerNorm(d) if cfg.norm_first else None,
            enable_nested_tensor=False,
        )
        dec_layer = nn.TransformerDecoderLayer(
            d, cfg.n_heads, cfg.ffn, cfg.dropout, batch_first=True, norm_first=cfg.norm_first
        )
        self.decoder = nn.TransformerDecoder(
            dec_layer, cfg.n_decoder_layers, norm=nn.LayerNorm(d) if cfg.norm_first else None
        )
        self.lm_head = nn.Linear(d, cfg.vocab_size, bias=False)
        if cfg.tie_lm_head:
            self.lm_head.weight = self.embed.weight

        self.fc_t = projection_head(cfg)
        self.fc_l = projection_head(cfg)

    # ── helpers ──
    def _check_len(self, ids: torch.Tensor, what: str) -> None:
        if ids.size(1) > self.cfg.max_len:
            raise SequenceTooLong(f"{what} of length {ids.size(1)} exceeds max_len={self.cfg.max_len}")

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        x = self.embed(ids) * math.sqrt(self.cfg.d_model)
        return self.dropout(self.positions(x))

    # ── encoder side ──
    def encode(self, ids: torch.Tensor) -> EncoderOutput:
        """Hidden states and the mean over non-pad positions."""
        self._check_len(ids, "source")
        pad_mask = ids.eq(self.pad_id)
        keep = (~pad_mask).to(self.embed.weight.dtype).unsqueeze(-1)
        counts = keep.sum(dim=1)
        if bool((counts == 0).any()):
            raise EmptyInput("input row holds only <pad>; nothing to pool")
        hidden = self.encoder(self._embed(ids), src_key_padding_mask=pad_mask)
        pooled = (hidden * keep).sum(dim=1) / counts
        return EncoderOutput(hidden=hidden, pad_mask=pad_mask, pooled=pooled)

    def project_text(self, pooled: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.fc_t(pooled), p=2, dim=-1)

    def project_label(self, pooled: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.fc_l(pooled), p=2, dim=-1)

    # ── decoder side ──
    def decode_logits(self, tgt_in: torch.Tensor, memory: EncoderOutput) -> torch.Tensor:
        self._check_len(tgt_in, "target")
        t = tgt_in.size(1)
        causal = torch.triu(torch.ones(t, t, dtype=torch.bool, device=tgt_in.device), diagonal=1)
        hidden = self.decoder(
            self._embed(tgt_in),
            memory.hidden,
            tgt_mask=causal,
            tgt_key_padding_mask=tgt_in.eq(self.pad_id),
            memory_key_padding_mask=memory.pad_mask,
        )
        return self.lm_head(hidden)

    def teacher_forced_forward(
        self,
        src: torch.Tensor,
        tgt: torch.Tensor,
        node_ids: Optional[torch.Tensor] = None,
        memory: Optional[EncoderOutput] = None,
    ) -> DistributionTrace:
        """``tgt`` starts with ``<s>``; position t predicts ``tgt[:, t + 1]``."""
        if bool((tgt[:, 0] != self.bos_id).any()):
            raise ModelError("teacher-forced targets must begin with <s>")
        self._check_len(tgt, "target")
        memory = memory if memory is not None else self.encode(src)
        gold = tgt[:, 1:]
        logits = self.decode_logits(tgt[:, :-1], memory)
        if node_ids is None:
            node_mask = torch.zeros_like(gold, dtype=torch.bool)
        else:
            node_mask = torch.isin(gold, node_ids.to(gold.device))
        return DistributionTrace(logits=logits, gold=gold, node_mask=node_mask, pad_mask=gold.eq(self.pad_id))

    @torch.no_grad()
    def generate(
        self,
        src: torch.Tensor,
        max_steps: int,
        constraint: Optional[ConstraintFn] = None,
    ) -> Generation:
        """
        Greedy decoding without a cache. With ``constraint`` the argmax runs
        over the admissible ids only; the recorded log-probabilities are
        always those of the unconstrained model distribution.
        """
        memory = self.encode(src)
        batch = src.size(0)
        ys = torch.full((batch, 1), self.bos_id, dtype=torch.long, device=src.device)
        out: List[List[int]] = [[] for _ in range(batch)]
        logps: List[List[float]] = [[] for _ in range(batch)]
        done = [False] * batch
        steps = min(max_steps, self.cfg.max_len - 1)
        for _ in range(steps):
            logits = self.decode_logits(ys, memory)[:, -1, :]
            log_probs = logits.log_softmax(dim=-1)
            if constraint is not None:
                masked = torch.full_like(logits, float("-inf"))
                for b in range(batch):
                    allowed = list(constraint(out[b])) or [self.eos_id]
                    idx = torch.tensor(allowed, dtype=torch.long, device=logits.device)
                    masked[b, idx] = logits[b, idx]
                logits = masked
            nxt = logits.argmax(dim=-1)
            for b in range(batch):
                if done[b]:
                    nxt[b] = self.pad_id
                    continue
                tok = int(nxt[b])
                out[b].append(tok)
                logps[b].append(float(log_probs[b, tok]))
                done[b] = tok == self.eos_id
            ys = torch.cat([ys, nxt.unsqueeze(1)], dim=1)
            if all(done):
                break
        return Generation(ids=out, step_log_probs=logps)


def build_model(cfg: ModelConfig, vocab_size: int, pad_id: int, bos_id: int, eos_id: int) -> HiGenSeq2Seq:
    cfg = cfg.model_copy(update={"vocab_size": vocab_size})
    model = HiGenSeq2Seq(cfg, pad_id=pad_id, bos_id=bos_id, eos_id=eos_id)
    n_params = sum(p.numel() for p in model.parameters())
    logger.info("model: d=%d, %d+%d layers, %d parameters", cfg.d_model, cfg.n_layers, cfg.n_decoder_layers, n_params)
    return model
