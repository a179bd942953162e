import csv
import dataclasses

import numpy as np
import pytest
import torch

from bagnet.config import Ablation, small_config
from bagnet.data import Document, Sample, SyntheticConfig, generate_synthetic, tokenize
from bagnet.features import HashEmbedding
from bagnet.model import BagModel, collate
from bagnet.trainer import (
    MAGIC,
    Checkpoint,
    CheckpointError,
    TrainError,
    evaluate,
    evaluate_model,
    featurize_all,
    make_featurizer,
    predict,
    train,
    write_metrics_csv,
)


@pytest.fixture(scope="module")
def data():
    return generate_synthetic(SyntheticConfig(n_samples=24, seed=5))


@pytest.fixture(scope="module")
def trained(data):
    return train(data[:16], small_config(epochs=2, batch_size=4, lr0=1e-2), dev=data[16:])


def test_zero_epochs_returns_initialisation(data):
    cfg = small_config(epochs=0)
    ckpt, metrics = train(data, cfg)
    init = BagModel(cfg.model, seed=cfg.seed).state_dict()
    assert metrics == [] and ckpt.epoch == 0 and ckpt.adam_step == 0
    assert set(ckpt.params) == set(init)
    for k in init:
        assert torch.equal(ckpt.params[k], init[k])


def test_determinism_bytes_and_metrics(data):
    cfg = small_config(epochs=2, batch_size=5, seed=3)
    a, b = train(data, cfg), train(data, cfg)
    assert a.checkpoint.to_bytes() == b.checkpoint.to_bytes()
    assert a.metrics == b.metrics
    c = train(data, small_config(epochs=2, batch_size=5, seed=4))
    assert c.checkpoint.to_bytes() != a.checkpoint.to_bytes()


def test_round_trip_is_bit_exact(trained, data, tmp_path):
    ckpt = trained.checkpoint
    path = tmp_path / "m.ckpt"
    ckpt.save(path)
    back = Checkpoint.load(path)
    assert back.to_bytes() == ckpt.to_bytes()
    assert back.config == ckpt.config and back.adam_step == ckpt.adam_step and back.rng == ckpt.rng
    batch = collate(featurize_all(data, make_featurizer(ckpt.config)))
    assert torch.equal(ckpt.model()(batch).logits, back.model()(batch).logits)
    assert set(back.optimizer) and all(k.startswith("adam.") for k in back.optimizer)


def test_checkpoint_header_layout(trained):
    import json
    import struct

    raw = trained.checkpoint.to_bytes()
    assert raw[:8] == MAGIC
    (n,) = struct.unpack_from("<Q", raw, 8)
    header = json.loads(raw[16 : 16 + n])
    assert header["format_version"] == 1
    assert header["config"]["seed"] == 0 and header["config"]["ablation"] == "FULL"
    assert header["adam"] == {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "step": 8}
    total = sum(int(np.prod(s)) for _, s in header["params"] + header["optimizer"])
    assert len(raw) == 16 + n + 8 * total


def test_corrupt_checkpoints_rejected(trained):
    raw = trained.checkpoint.to_bytes()
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(b"garbage" + raw)
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(raw + b"\x00" * 8)
    bumped = raw.replace(b'"format_version": 1', b'"format_version": 9')
    with pytest.raises(CheckpointError, match="version"):
        Checkpoint.from_bytes(bumped)


def test_metrics_and_best_selection(trained, tmp_path):
    assert [m.epoch for m in trained.metrics] == [0, 1]
    assert all(m.dev_accuracy is not None for m in trained.metrics)
    best = max(range(2), key=lambda e: (trained.metrics[e].dev_accuracy, -e))
    assert trained.best_epoch == best and trained.selected is trained.best_checkpoint
    path = tmp_path / "m.csv"
    write_metrics_csv(trained.metrics, path)
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["epoch", "lr", "train_loss", "dev_accuracy"]
    assert float(rows[1]["train_loss"]) == trained.metrics[1].train_loss


def test_lr_to_zero_leaves_parameters(data):
    cfg = small_config(epochs=1, batch_size=len(data), lr0=1e-300)
    ckpt, _ = train(data, cfg)
    init = BagModel(cfg.model, seed=cfg.seed).state_dict()
    assert ckpt.adam_step == 1
    assert max(float((ckpt.params[k] - init[k]).abs().max()) for k in init) <= 1e-12


def test_all_unanswerable_raises():
    s = Sample("u", "r x", ("r", "x"), (Document(0, ("a", "b")),), ("a", "z"), 1)
    with pytest.raises(TrainError):
        train([s], small_config(epochs=1))
    with pytest.raises(TrainError):
        train([], small_config(epochs=1))


def test_unanswerable_and_empty_counted_wrong(trained):
    unmentioned = Sample("u", "r x", ("r", "x"), (Document(0, ("a", "b")),), ("a", "z"), 1)
    empty = Sample("e", "r x", ("r", "x"), (Document(0, ("q",)),), ("a", "z"), 0)
    res = evaluate(trained.checkpoint, [unmentioned, empty])
    assert res.accuracy == 0.0
    assert res.predictions[0].predicted == 0 and res.predictions[1].predicted is None


def test_evaluate_is_deterministic(trained, data):
    a, b = evaluate(trained.checkpoint, data), evaluate(trained.checkpoint, data)
    assert a.accuracy == b.accuracy and a.predictions == b.predictions


def test_hand_crafted_model_scores_gold_highest():
    cfg = small_config(token_dim=64, ctx_dim=6)
    texts = [
        ("paris is in france ; lyon too", ["paris", "lyon", "france"]),
        ("berlin and paris , rome", ["rome", "paris", "berlin"]),
        ("madrid , paris", ["madrid", "paris"]),
    ]
    samples = [
        Sample(f"h{i}", "capital x", ("capital", "x"), (Document(0, tuple(tokenize(t))),), tuple(c), c.index("paris"))
        for i, (t, c) in enumerate(texts)
    ]
    model = BagModel(cfg.model, seed=0)
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
        gold = torch.tensor(HashEmbedding(64).vector("paris"))
        model.node_encoder.weight[0, :64] = 5 * gold
        model.predictor.w1[0, 0] = 1.0
        model.predictor.w2[0, 0] = 10.0
    res = evaluate_model(model, featurize_all(samples, make_featurizer(cfg)))
    assert res.accuracy == 1.0


def test_chance_level_with_random_parameters():
    samples = generate_synthetic(SyntheticConfig(n_candidates=5, n_samples=500, seed=11))
    cfg = small_config()
    acc = evaluate_model(BagModel(cfg.model, seed=0), featurize_all(samples, make_featurizer(cfg))).accuracy
    assert abs(acc - 1 / 5) <= 0.1


def test_predict_rows(trained, data):
    rows = predict(trained.checkpoint, data[:3])
    assert [r["id"] for r in rows] == [s.id for s in data[:3]]
    for r, s in zip(rows, data):
        assert r["predicted_candidate"] in s.candidates
        assert len(r["probs"]) == len(s.candidates) and abs(sum(r["probs"]) - 1) < 1e-9


def test_ablation_argument_and_workers(data):
    a = train(data, small_config(epochs=1), ablation=Ablation.NO_GCN, workers=3)
    b = train(data, small_config(epochs=1, ablation="NO_GCN"))
    assert a.checkpoint.config.model.ablation is Ablation.NO_GCN
    assert a.checkpoint.to_bytes() == b.checkpoint.to_bytes()
