"""Gated relational graph convolution with parameters shared across layers."""

from __future__ import annotations

import torch
from torch import nn

from .features import glorot


class RgcnParams(nn.Module):
    """Relation matrices ``w_rel`` (R, d, d), self matrix ``w_self`` and the gate map."""

    def __init__(self, d, n_relations, gen):
        super().__init__()
        self.w_rel = nn.Parameter(torch.stack([glorot((d, d), gen) for _ in range(n_relations)]))
        self.w_self = nn.Parameter(glorot((d, d), gen))
        self.gate_weight = nn.Parameter(glorot((d, 2 * d), gen))
        self.gate_bias = nn.Parameter(torch.zeros(d, dtype=torch.float64))


def propagate(h, adjacency, w_rel, w_self, norm="total"):
    """Pre-activation update ``u``.

    ``h`` is (..., T, d) and ``adjacency`` (..., R, T, T).  When ``w_rel`` holds a
    single matrix the relations are merged into one edge set.  With ``norm="total"`` each message is
    divided by the node's neighbour count over all relations; ``"relation"`` divides
    by the per-relation count.  Isolated nodes get ``u = W_0 h``.
    """
    if h.shape[-2] != adjacency.shape[-1] or h.shape[-1] != w_self.shape[1]:
        raise ValueError(f"shape mismatch: h {tuple(h.shape)}, adjacency {tuple(adjacency.shape)}")
    if w_rel.shape[0] == 1:
        adjacency = adjacency.sum(dim=-3, keepdim=True)
    msgs = adjacency @ h.unsqueeze(-3)  # (..., R, T, d): sum of neighbour states per relation
    if norm == "total":
        count = adjacency.sum(dim=(-3, -1)).clamp(min=1.0).unsqueeze(-1)
        msgs = msgs / count.unsqueeze(-3)
    else:
        msgs = msgs / adjacency.sum(dim=-1, keepdim=True).clamp(min=1.0)
    u = (msgs @ w_rel.transpose(-1, -2)).sum(dim=-3)
    return u + h @ w_self.T


def gate(u, h, gate_weight, gate_bias):
    return torch.sigmoid(torch.cat([u, h], dim=-1) @ gate_weight.T + gate_bias)


def gate_update(u, h, gate_weight, gate_bias):
    if u.shape != h.shape:
        raise ValueError(f"u {tuple(u.shape)} and h {tuple(h.shape)} differ")
    w = gate(u, h, gate_weight, gate_bias)
    return w * torch.tanh(u) + (1 - w) * h


def run_stack(h0, adjacency, params: RgcnParams, n_layers, norm="total"):
    if n_layers < 0:
        raise ValueError("n_layers must be >= 0")
    h = h0
    for _ in range(n_layers):
        u = propagate(h, adjacency, params.w_rel, params.w_self, norm)
        h = gate_update(u, h, params.gate_weight, params.gate_bias)
    return h
