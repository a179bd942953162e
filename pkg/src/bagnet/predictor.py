"""Node scoring, candidate aggregation and the answer loss."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .attention import masked_softmax
from .features import glorot


class Unanswerable(ValueError):
    """The gold candidate has no mention in the graph."""


class PredictorParams(nn.Module):
    """Two-layer scorer.  ``out_bias=False`` drops ``b2``, which the node softmax cancels
    unless the final tanh is enabled."""

    def __init__(self, in_dim, hidden, gen, out_bias=True):
        super().__init__()
        self.w1 = nn.Parameter(glorot((hidden, in_dim), gen))
        self.b1 = nn.Parameter(torch.zeros(hidden, dtype=torch.float64))
        self.w2 = nn.Parameter(glorot((1, hidden), gen))
        self.b2 = nn.Parameter(torch.zeros(1, dtype=torch.float64)) if out_bias else None


def node_scores(fused, params: PredictorParams, output_tanh=False):
    logits = torch.tanh(fused @ params.w1.T + params.b1) @ params.w2.T
    if params.b2 is not None:
        logits = logits + params.b2
    logits = logits.squeeze(-1)
    return torch.tanh(logits) if output_tanh else logits


@dataclass
class CandidateDistribution:
    probs: torch.Tensor  # (..., C)
    node_probs: torch.Tensor  # (..., T)


def candidate_distribution(logits, node_candidate, n_candidates, node_mask=None):
    """Softmax over real nodes, then sum node mass per candidate.

    ``node_candidate`` holds each node's candidate index (any value on padded slots).
    """
    if node_mask is None:
        node_mask = torch.ones_like(logits, dtype=torch.bool)
    if not bool(node_mask.any(dim=-1).all()):
        raise ValueError("candidate_distribution needs at least one real node per sample")
    node_probs = masked_softmax(logits, node_mask, dim=-1)
    idx = node_candidate.clamp(min=0, max=max(n_candidates - 1, 0))
    onehot = torch.nn.functional.one_hot(idx, n_candidates).to(logits.dtype) * node_mask.unsqueeze(-1)
    probs = (node_probs.unsqueeze(-2) @ onehot).squeeze(-2)
    return CandidateDistribution(probs, node_probs)


def nll_loss(dist: CandidateDistribution, gold: int):
    p = dist.probs[..., gold]
    if float(p.detach()) <= 0.0:
        raise Unanswerable(f"gold candidate {gold} has no mentions")
    return -torch.log(p)


def batch_nll(logits, node_candidate, gold, node_mask):
    """Per-sample ``-log p[gold]`` in log space, plus the answerable mask.

    ``logsumexp`` over all real nodes minus ``logsumexp`` over the gold candidate's
    mentions; samples without a label or without a gold mention get loss 0 and
    ``valid=False``.
    """
    gold_nodes = node_mask & (node_candidate == gold.unsqueeze(-1))
    valid = (gold >= 0) & gold_nodes.any(dim=-1)
    lse_all = torch.logsumexp(logits.masked_fill(~node_mask, -1e30), dim=-1)
    lse_gold = torch.logsumexp(logits.masked_fill(~gold_nodes, -1e30), dim=-1)
    return torch.where(valid, lse_all - lse_gold, torch.zeros_like(lse_all)), valid
