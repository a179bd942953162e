import numpy as np
import pytest
import torch

from bagnet.config import Ablation, make_variant, small_config
from bagnet.data import SyntheticConfig, generate_synthetic
from bagnet.model import BagModel, collate
from bagnet.trainer import featurize_all, make_featurizer


@pytest.fixture(scope="module")
def feats():
    samples = generate_synthetic(SyntheticConfig(n_samples=6, seed=4))
    return featurize_all(samples, make_featurizer(small_config()))


@pytest.mark.parametrize("variant", list(Ablation))
def test_padding_does_not_change_outputs(feats, variant):
    cfg = make_variant(small_config(), variant)
    model = BagModel(cfg.model, seed=3).eval()
    feats = featurize_all(generate_synthetic(SyntheticConfig(n_samples=6, seed=4)), make_featurizer(cfg))
    together = model(collate(feats))
    for i, f in enumerate(feats):
        alone = model(collate([f]))
        n = len(f.graph)
        torch.testing.assert_close(together.logits[i, :n], alone.logits[0], rtol=0, atol=1e-12)
        torch.testing.assert_close(together.probs[i], alone.probs[0], rtol=0, atol=1e-12)
        assert bool((together.node_probs[i, n:] == 0).all())


def test_no_attention_predictor_width():
    for d_hat in (4, 8, 16):
        cfg = make_variant(small_config(d_hat=d_hat), Ablation.NO_ATTENTION).model
        assert BagModel(cfg).predictor.w1.shape[1] == 2 * cfg.d


def test_variant_parameter_sets():
    names = lambda v: {n.split(".")[0] for n, _ in BagModel(make_variant(small_config(), v).model).named_parameters()}
    assert "rgcn" not in names(Ablation.NO_GCN)
    assert "tags" not in names(Ablation.NO_TAGS)
    assert "w_a" in names(Ablation.SINGLE_ATTENTION) and "similarity" not in names(Ablation.SINGLE_ATTENTION)
    assert BagModel(make_variant(small_config(), Ablation.NO_EDGE_TYPE).model).rgcn.w_rel.shape[0] == 1


def test_dropout_only_in_training(feats):
    model = BagModel(small_config().model, seed=0)
    batch = collate(feats)
    model.eval()
    a, b = model(batch).logits, model(batch).logits
    assert torch.equal(a, b)
    model.train()
    g = torch.Generator().manual_seed(0)
    c = model(batch, g).logits
    assert not torch.allclose(a, c)
    model.train()
    torch.testing.assert_close(model(batch, torch.Generator().manual_seed(0)).logits, c, rtol=0, atol=0)


def test_candidate_probs_sum_to_one(feats):
    with torch.no_grad():
        out = BagModel(small_config().model, seed=1).eval()(collate(feats))
    assert float((out.probs.sum(-1) - 1).abs().max()) <= 1e-9


def test_collate_rejects_empty_graph(feats):
    import dataclasses
    from bagnet.graph import EntityGraph

    empty = dataclasses.replace(feats[0], graph=EntityGraph((), ()))
    with pytest.raises(ValueError):
        collate([empty])


def test_node_permutation_equivariance(feats):
    import dataclasses

    model = BagModel(small_config().model, seed=2).eval()
    f = feats[0]
    perm = np.random.default_rng(0).permutation(len(f.graph))
    g = dataclasses.replace(
        f,
        node_input=f.node_input[perm],
        node_ner=f.node_ner[perm],
        node_pos=f.node_pos[perm],
        node_candidate=f.node_candidate[perm],
        adjacency=f.adjacency[:, perm][:, :, perm],
    )
    a, b = model(collate([f])), model(collate([g]))
    torch.testing.assert_close(b.logits[0], a.logits[0][torch.from_numpy(perm)], rtol=0, atol=1e-10)
    torch.testing.assert_close(b.probs, a.probs, rtol=0, atol=1e-12)
