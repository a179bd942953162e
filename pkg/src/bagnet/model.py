"""End-to-end BAG wiring over padded batches, including the ablation variants."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import attention as att
from .config import Ablation, ModelConfig
from .features import NodeEncoder, QueryEncoder, SampleFeatures, TagEmbeddings, glorot
from .predictor import PredictorParams, batch_nll, candidate_distribution, node_scores
from .rgcn import RgcnParams, run_stack


@dataclass
class Batch:
    node_input: torch.Tensor  # (B, T, in)
    node_ner: torch.Tensor
    node_pos: torch.Tensor
    node_mask: torch.Tensor  # (B, T) bool
    adjacency: torch.Tensor  # (B, 2, T, T)
    node_candidate: torch.Tensor  # (B, T), -1 on padding
    query_input: torch.Tensor  # (B, M, token_dim)
    query_ner: torch.Tensor
    query_pos: torch.Tensor
    query_mask: torch.Tensor
    query_len: torch.Tensor
    n_candidates: int
    candidate_mask: torch.Tensor  # (B, C) bool
    gold: torch.Tensor  # (B,), -1 when unlabeled

    def __len__(self):
        return self.node_input.shape[0]


def collate(items: list[SampleFeatures]) -> Batch:
    """Pad a list of non-empty-graph samples to the batch maxima."""
    if any(len(f.graph) == 0 for f in items):
        raise ValueError("cannot batch samples with empty graphs")
    b = len(items)
    t = max(len(f.graph) for f in items)
    m = max(f.query_input.shape[0] for f in items)
    c = max(f.n_candidates for f in items)
    width = items[0].node_input.shape[1]
    tok = items[0].query_input.shape[1]
    node_input = np.zeros((b, t, width))
    node_ner = np.zeros((b, t), dtype=np.int64)
    node_pos = np.zeros((b, t), dtype=np.int64)
    node_mask = np.zeros((b, t), dtype=bool)
    adjacency = np.zeros((b, 2, t, t))
    node_candidate = np.full((b, t), -1, dtype=np.int64)
    query_input = np.zeros((b, m, tok))
    query_ner = np.zeros((b, m), dtype=np.int64)
    query_pos = np.zeros((b, m), dtype=np.int64)
    query_mask = np.zeros((b, m), dtype=bool)
    candidate_mask = np.zeros((b, c), dtype=bool)
    gold = np.full(b, -1, dtype=np.int64)
    for i, f in enumerate(items):
        n, q = len(f.graph), f.query_input.shape[0]
        node_input[i, :n] = f.node_input
        node_ner[i, :n] = f.node_ner
        node_pos[i, :n] = f.node_pos
        node_mask[i, :n] = True
        adjacency[i, :, :n, :n] = f.adjacency
        node_candidate[i, :n] = f.node_candidate
        query_input[i, :q] = f.query_input
        query_ner[i, :q] = f.query_ner
        query_pos[i, :q] = f.query_pos
        query_mask[i, :q] = True
        candidate_mask[i, : f.n_candidates] = True
        if f.gold is not None:
            gold[i] = f.gold
    tt = torch.from_numpy
    return Batch(
        tt(node_input), tt(node_ner), tt(node_pos), tt(node_mask), tt(adjacency), tt(node_candidate),
        tt(query_input), tt(query_ner), tt(query_pos), tt(query_mask), tt(query_mask.sum(1)),
        c, tt(candidate_mask), tt(gold),
    )


@dataclass
class Forward:
    logits: torch.Tensor
    node_probs: torch.Tensor
    probs: torch.Tensor
    f_n: torch.Tensor
    f_q: torch.Tensor
    h_nodes: torch.Tensor


class BagModel(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(seed)
        d = cfg.d
        self.tags = TagEmbeddings(cfg.d_ner, cfg.d_pos, gen) if cfg.use_tags else None
        self.node_encoder = NodeEncoder(cfg.node_input_dim, cfg.d_hat, gen)
        self.query_encoder = QueryEncoder(cfg, gen)
        self.rgcn = RgcnParams(d, 2 if cfg.typed_edges else 1, gen) if cfg.use_gcn else None
        if cfg.ablation is Ablation.SINGLE_ATTENTION:
            self.w_a = nn.Parameter(glorot((d, d), gen))
        elif cfg.ablation is not Ablation.NO_ATTENTION:
            self.similarity = att.SimilarityParams(d, gen, bias=False)
        self.predictor = PredictorParams(cfg.predictor_input_dim, cfg.ffn_hidden, gen, out_bias=cfg.output_tanh)

    def node_representation(self, f_n, f_q, h_nodes, batch: Batch):
        kind = self.cfg.ablation
        if kind is Ablation.NO_ATTENTION:
            qm = batch.query_mask.unsqueeze(-1).to(f_q.dtype)
            pooled = (f_q * qm).sum(-2) / qm.sum(-2)
            return torch.cat([h_nodes, pooled.unsqueeze(-2).expand_as(h_nodes)], dim=-1)
        if kind is Ablation.SINGLE_ATTENTION:
            return att.single_attention(h_nodes, f_n, f_q, self.w_a, batch.query_mask)[1]
        return att.bi_attention(
            h_nodes, f_n, f_q, self.similarity.weight, None, batch.node_mask, batch.query_mask
        )[3]

    def forward(self, batch: Batch, generator: torch.Generator | None = None) -> Forward:
        cfg = self.cfg
        f_n = self.node_encoder(batch.node_input, batch.node_ner, batch.node_pos, self.tags)
        f_q = self.query_encoder(batch.query_input, batch.query_len, batch.query_ner, batch.query_pos, self.tags)
        if self.rgcn is not None:
            h0 = f_n
            if self.training and cfg.dropout > 0:
                keep = torch.rand(f_n.shape, generator=generator, dtype=f_n.dtype) >= cfg.dropout
                h0 = f_n * keep / (1 - cfg.dropout)
            adjacency = batch.adjacency
            h_nodes = run_stack(h0, adjacency, self.rgcn, cfg.n_layers, cfg.norm)
        else:
            h_nodes = f_n
        rep = self.node_representation(f_n, f_q, h_nodes, batch)
        logits = node_scores(rep, self.predictor, cfg.output_tanh)
        dist = candidate_distribution(logits, batch.node_candidate, batch.n_candidates, batch.node_mask)
        return Forward(logits, dist.node_probs, dist.probs, f_n, f_q, h_nodes)

    def loss(self, batch: Batch, generator=None):
        """Mean ``-log p[gold]`` over answerable samples, and the answerable mask."""
        out = self.forward(batch, generator)
        per, valid = batch_nll(out.logits, batch.node_candidate, batch.gold, batch.node_mask)
        n = valid.sum()
        if int(n) == 0:
            return per.sum(), valid, out
        return per.sum() / n, valid, out
