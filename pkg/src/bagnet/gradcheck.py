"""Central-difference gradient checking for the model and its parts."""

from __future__ import annotations

import math

import numpy as np
import torch

from .config import Ablation, TrainConfig, make_variant, small_config
from .model import BagModel, Batch


class GradCheckError(RuntimeError):
    pass


def autograd_grads(loss_fn, params):
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


def grad_check(loss_fn, params, probe_count=50, step=1e-5, seed=0, grad_fn=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn()`` returns a scalar tensor built from ``params``.  ``grad_fn(loss_fn,
    params)`` supplies the analytic gradients (autograd by default).  Probed scalars are
    drawn uniformly over all parameter entries; the denominator is
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    params = list(params)
    analytic = (grad_fn or autograd_grads)(loss_fn, params)
    sizes = np.array([p.numel() for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    flat_idx = rng.choice(total, size=min(probe_count, total), replace=False)
    offsets = np.cumsum(sizes) - sizes
    worst = 0.0
    with torch.no_grad():
        for k in flat_idx:
            which = int(np.searchsorted(offsets, k, side="right") - 1)
            p = params[which]
            flat = p.view(-1)
            j = int(k - offsets[which])
            orig = flat[j].item()
            flat[j] = orig + step
            plus = float(loss_fn())
            flat[j] = orig - step
            minus = float(loss_fn())
            flat[j] = orig
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise GradCheckError("non-finite loss during finite differencing")
            numeric = (plus - minus) / (2 * step)
            a = float(analytic[which].reshape(-1)[j])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def random_batch(cfg: TrainConfig, n_nodes=6, n_query=5, n_candidates=3, seed=0, edge_prob=0.5) -> Batch:
    """One random sample shaped like a featurized graph, gold candidate guaranteed mentioned."""
    m = cfg.model
    g = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    adj = np.zeros((2, n_nodes, n_nodes))
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            if rng.random() < edge_prob:
                r = rng.integers(2)
                adj[r, i, j] = adj[r, j, i] = 1.0
    cand = rng.integers(n_candidates, size=n_nodes)
    gold = int(cand[rng.integers(n_nodes)])
    return Batch(
        node_input=torch.randn((1, n_nodes, m.node_input_dim), generator=g, dtype=torch.float64),
        node_ner=torch.randint(2, 5, (1, n_nodes), generator=g),
        node_pos=torch.randint(2, 7, (1, n_nodes), generator=g),
        node_mask=torch.ones((1, n_nodes), dtype=torch.bool),
        adjacency=torch.from_numpy(adj).unsqueeze(0),
        node_candidate=torch.from_numpy(cand).unsqueeze(0),
        query_input=torch.randn((1, n_query, m.token_dim), generator=g, dtype=torch.float64),
        query_ner=torch.randint(2, 5, (1, n_query), generator=g),
        query_pos=torch.randint(2, 7, (1, n_query), generator=g),
        query_mask=torch.ones((1, n_query), dtype=torch.bool),
        query_len=torch.tensor([n_query]),
        n_candidates=n_candidates,
        candidate_mask=torch.ones((1, n_candidates), dtype=torch.bool),
        gold=torch.tensor([gold]),
    )


def check_model(
    ablation: Ablation | str = Ablation.FULL,
    config: TrainConfig | None = None,
    probe_count=200,
    step=1e-5,
    seed=0,
    grad_fn=None,
    **shape,
) -> float:
    """Gradient check of the full forward + loss for one variant on a random instance."""
    cfg = make_variant(config or small_config(), ablation)
    model = BagModel(cfg.model, seed=seed)
    model.eval()
    batch = random_batch(cfg, seed=seed, **shape)

    def loss_fn():
        return model.loss(batch)[0]

    return grad_check(loss_fn, list(model.parameters()), probe_count, step, seed, grad_fn)
