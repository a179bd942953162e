import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

import oracles
from bagnet.gradcheck import grad_check
from bagnet.rgcn import RgcnParams, gate, gate_update, propagate, run_stack


def random_adjacency(rng, t, p=0.5):
    adj = np.zeros((2, t, t))
    for i in range(t):
        for j in range(i + 1, t):
            if rng.random() < p:
                r = rng.integers(2)
                adj[r, i, j] = adj[r, j, i] = 1
    return adj


def test_isolated_identity():
    h = torch.randn(1, 4)
    u = propagate(h, torch.zeros(2, 1, 1), torch.randn(2, 4, 4), torch.eye(4))
    torch.testing.assert_close(u, h, rtol=0, atol=0)


def test_single_neighbour_swap():
    h = torch.randn(2, 3)
    adj = torch.zeros(2, 2, 2)
    adj[0, 0, 1] = adj[0, 1, 0] = 1
    u = propagate(h, adj, torch.stack([torch.eye(3), torch.eye(3)]), torch.zeros(3, 3))
    torch.testing.assert_close(u, h.flip(0), rtol=0, atol=0)


@pytest.mark.parametrize("norm", ["total", "relation"])
@given(seed=st.integers(0, 10**6), t=st.integers(1, 6), shared=st.booleans())
def test_propagate_matches_double_loop(norm, seed, t, shared):
    rng = np.random.default_rng(seed)
    d = 4
    h = rng.standard_normal((t, d))
    adj = random_adjacency(rng, t)
    w_rel = rng.standard_normal((1 if shared else 2, d, d))
    w_self = rng.standard_normal((d, d))
    if shared:
        # merged relations: a node pair carries at most one edge, so the merged count is the total
        expect = oracles.propagate(h, adj.sum(0, keepdims=True), w_rel, w_self, norm)
    else:
        expect = oracles.propagate(h, adj, w_rel, w_self, norm)
    got = propagate(*map(torch.from_numpy, (h, adj, w_rel, w_self)), norm=norm)
    np.testing.assert_allclose(got.numpy(), expect, rtol=1e-12, atol=1e-12)


def test_propagate_shape_error():
    with pytest.raises(ValueError):
        propagate(torch.zeros(3, 4), torch.zeros(2, 2, 2), torch.zeros(2, 4, 4), torch.zeros(4, 4))
    with pytest.raises(ValueError):
        gate_update(torch.zeros(3, 4), torch.zeros(3, 5), torch.zeros(5, 10), torch.zeros(5))


def test_zero_gate_is_half():
    u, h = torch.randn(3, 4), torch.randn(3, 4)
    out = gate_update(u, h, torch.zeros(4, 8), torch.zeros(4))
    torch.testing.assert_close(out, 0.5 * torch.tanh(u) + 0.5 * h, rtol=0, atol=1e-15)


def test_zero_fixed_point(gen):
    p = RgcnParams(4, 2, gen)
    z = torch.zeros(3, 4)
    assert torch.count_nonzero(gate_update(z, z, p.gate_weight, p.gate_bias)) == 0


def test_update_between_tanh_u_and_h():
    g = torch.Generator().manual_seed(5)
    u, h = 3 * torch.randn(10_000, 4, generator=g), 3 * torch.randn(10_000, 4, generator=g)
    out = gate_update(u, h, torch.randn(4, 8, generator=g), torch.randn(4, generator=g))
    lo, hi = torch.minimum(torch.tanh(u), h), torch.maximum(torch.tanh(u), h)
    assert bool(((out >= lo) & (out <= hi)).all())


# states live in (-1, 1); float64 sigmoid only rounds to 0 or 1 past |z| ~ 36.7
@given(st.integers(0, 10**6), st.floats(0.1, 3.0))
def test_gate_strictly_inside_unit_interval(seed, scale):
    g = torch.Generator().manual_seed(seed)
    p = RgcnParams(12, 2, g)
    h = torch.tanh(3 * torch.randn(6, 12, generator=g))
    adj = torch.from_numpy(random_adjacency(np.random.default_rng(seed), 6))
    u = propagate(h, adj, scale * p.w_rel, scale * p.w_self)
    w = gate(u, h, scale * p.gate_weight, torch.randn(12, generator=g))
    assert bool(((w > 0) & (w < 1)).all())


def test_zero_layers_is_identity(gen):
    h = torch.randn(3, 4)
    assert run_stack(h, torch.zeros(2, 3, 3), RgcnParams(4, 2, gen), 0) is h
    with pytest.raises(ValueError):
        run_stack(h, torch.zeros(2, 3, 3), RgcnParams(4, 2, gen), -1)


def path_adjacency(t):
    adj = torch.zeros(2, t, t)
    for i in range(t - 1):
        adj[i % 2, i, i + 1] = adj[i % 2, i + 1, i] = 1
    return adj


def test_three_node_path_locality(gen):
    p = RgcnParams(4, 2, gen)
    adj = torch.zeros(2, 3, 3)
    adj[0, 0, 1] = adj[0, 1, 0] = adj[1, 1, 2] = adj[1, 2, 1] = 1
    h = torch.randn(3, 4, generator=gen)
    bumped = h.clone()
    bumped[2] += 1.0
    assert torch.equal(run_stack(h, adj, p, 1)[0], run_stack(bumped, adj, p, 1)[0])
    assert not torch.allclose(run_stack(h, adj, p, 2)[0], run_stack(bumped, adj, p, 2)[0])


def test_default_depth_stays_finite():
    gen = torch.Generator().manual_seed(0)
    p = RgcnParams(528, 2, gen)
    rng = np.random.default_rng(0)
    adj = torch.from_numpy(random_adjacency(rng, 40, 0.2))
    out = run_stack(torch.randn(40, 528, generator=gen), adj, p, 5)
    assert bool(torch.isfinite(out).all())


def test_run_stack_gradients(gen):
    p = RgcnParams(5, 2, gen)
    rng = np.random.default_rng(1)
    adj = torch.from_numpy(random_adjacency(rng, 6))
    h0 = torch.randn(6, 5, generator=gen, requires_grad=True)
    target = torch.randn(6, 5, generator=gen)
    loss = lambda: ((run_stack(h0, adj, p, 3) - target) ** 2).sum()
    assert grad_check(loss, [h0, *p.parameters()], probe_count=80) < 1e-4


def test_batched_matches_unbatched(gen):
    p = RgcnParams(4, 2, gen)
    rng = np.random.default_rng(2)
    adjs = torch.stack([torch.from_numpy(random_adjacency(rng, 5)) for _ in range(3)])
    h = torch.randn(3, 5, 4, generator=gen)
    batched = run_stack(h, adjs, p, 2)
    for b in range(3):
        torch.testing.assert_close(batched[b], run_stack(h[b], adjs[b], p, 2), rtol=0, atol=1e-14)
