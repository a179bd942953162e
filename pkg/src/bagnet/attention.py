"""Bi-directional attention between graph nodes and query tokens.

Masks are boolean with True on real positions.  Node-to-query attention
normalises each node's similarity row over query positions; query-to-node
attention takes each node's best query similarity, softmaxes over nodes, and
tiles the weighted node summary back onto every node.
"""

from __future__ import annotations

import torch
from torch import nn

from .features import glorot

_NEG = -1e30


class SimilarityParams(nn.Module):
    """``f_a``.  Its bias only shifts every entry of S by one constant, which both
    attention directions are invariant to, so models build it without one."""

    def __init__(self, d, gen, bias=True):
        super().__init__()
        self.weight = nn.Parameter(glorot((d, 3 * d), gen))
        self.bias = nn.Parameter(torch.zeros(d, dtype=torch.float64)) if bias else None


def similarity(h_nodes, f_q, weight, bias=None):
    """``S[t, m] = mean(f_a([h_t; q_m; h_t * q_m]))``, shape (..., T, M).

    The mean of a linear map is linear, so this contracts the averaged weight rows
    instead of materialising the (T, M, 3d) concatenation.
    """
    d = h_nodes.shape[-1]
    if f_q.shape[-1] != d or weight.shape[1] != 3 * d:
        raise ValueError(f"width mismatch: nodes {d}, query {f_q.shape[-1]}, f_a {tuple(weight.shape)}")
    w = weight.mean(dim=0)
    w_h, w_q, w_hq = w[:d], w[d : 2 * d], w[2 * d :]
    s = (h_nodes * w_hq) @ f_q.transpose(-1, -2)
    s = s + (h_nodes @ w_h).unsqueeze(-1) + (f_q @ w_q).unsqueeze(-2)
    return s if bias is None else s + bias.mean()


def masked_softmax(x, mask, dim):
    if mask is not None:
        x = x.masked_fill(~mask, _NEG)
    x = x - x.amax(dim=dim, keepdim=True).detach()
    e = torch.exp(x)
    if mask is not None:
        e = e * mask
    return e / e.sum(dim=dim, keepdim=True)


def node_to_query(s, f_q, query_mask=None):
    if s.shape[-1] == 0:
        raise ValueError("node_to_query needs at least one query position")
    qm = None if query_mask is None else query_mask.unsqueeze(-2)
    return masked_softmax(s, qm, dim=-1) @ f_q


def query_to_node_weights(s, query_mask=None, node_mask=None):
    if s.shape[-2] == 0:
        raise ValueError("query_to_node needs at least one node")
    if query_mask is not None:
        s = s.masked_fill(~query_mask.unsqueeze(-2), _NEG)
    best = s.amax(dim=-1)
    return masked_softmax(best, node_mask, dim=-1)


def query_to_node(s, f_n, query_mask=None, node_mask=None):
    beta = query_to_node_weights(s, query_mask, node_mask)
    summary = (beta.unsqueeze(-1) * f_n).sum(dim=-2, keepdim=True)
    return summary.expand_as(f_n)


def fuse(f_n, a_n2q, a_q2n):
    if not f_n.shape == a_n2q.shape == a_q2n.shape:
        raise ValueError("fuse inputs must share a shape")
    return torch.cat([f_n, a_n2q, f_n * a_n2q, f_n * a_q2n], dim=-1)


def bi_attention(h_nodes, f_n, f_q, weight, bias=None, node_mask=None, query_mask=None):
    """Returns ``(S, a_n2q, a_q2n, fused)``; ``h_nodes`` only feeds the similarity."""
    s = similarity(h_nodes, f_q, weight, bias)
    a_n2q = node_to_query(s, f_q, query_mask)
    a_q2n = query_to_node(s, f_n, query_mask, node_mask)
    return s, a_n2q, a_q2n, fuse(f_n, a_n2q, a_q2n)


def single_attention(h_nodes, f_n, f_q, w_a, query_mask=None):
    """Bilinear ablation: ``S = h W_a f_q^T``, rows attend into the query."""
    s = h_nodes @ w_a @ f_q.transpose(-1, -2)
    a = node_to_query(s, f_q, query_mask)
    return s, torch.cat([f_n, a], dim=-1)
