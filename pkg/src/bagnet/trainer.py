"""Training loop, evaluation and the single-file checkpoint format."""

from __future__ import annotations

import base64
import csv
import io
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import Ablation, TrainConfig, make_variant
from .data import Sample
from .features import Featurizer, SampleFeatures
from .model import BagModel, collate

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"BAGCKPT\x00"


class TrainError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict[str, torch.Tensor]
    optimizer: dict[str, torch.Tensor] = field(default_factory=dict)
    adam_step: int = 0
    epoch: int = 0
    rng: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def model(self) -> BagModel:
        model = BagModel(self.config.model, seed=self.config.seed)
        model.load_state_dict(self.params)
        model.eval()
        return model

    def to_bytes(self) -> bytes:
        tensors = list(self.params.items()) + list(self.optimizer.items())
        header = {
            "format_version": FORMAT_VERSION,
            "config": self.config.to_flat(),
            "adam": {
                "beta1": self.config.adam_beta1,
                "beta2": self.config.adam_beta2,
                "eps": self.config.adam_eps,
                "step": self.adam_step,
            },
            "epoch": self.epoch,
            "rng": self.rng,
            "extra": self.extra,
            "params": [[k, list(v.shape)] for k, v in self.params.items()],
            "optimizer": [[k, list(v.shape)] for k, v in self.optimizer.items()],
        }
        head = json.dumps(header, sort_keys=True).encode("utf-8")
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<Q", len(head)))
        buf.write(head)
        for _, t in tensors:
            buf.write(t.detach().to(torch.float64).contiguous().numpy().astype("<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if data[: len(MAGIC)] != MAGIC:
            raise CheckpointError("not a BAG checkpoint")
        (n,) = struct.unpack_from("<Q", data, len(MAGIC))
        start = len(MAGIC) + 8
        header = json.loads(data[start : start + n].decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
        offset = start + n

        def read(entries):
            nonlocal offset
            out = {}
            for name, shape in entries:
                count = int(np.prod(shape)) if shape else 1
                arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
                out[name] = torch.from_numpy(arr.astype(np.float64))
                offset += 8 * count
            return out

        params = read(header["params"])
        optimizer = read(header["optimizer"])
        if offset != len(data):
            raise CheckpointError("trailing bytes in checkpoint")
        return cls(
            config=TrainConfig.from_flat(header["config"]),
            params=params,
            optimizer=optimizer,
            adam_step=header["adam"]["step"],
            epoch=header["epoch"],
            rng=header["rng"],
            extra=header["extra"],
        )

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _state_copy(model):
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def _optimizer_tensors(opt, model):
    out = {}
    for name, p in model.named_parameters():
        st = opt.state.get(p)
        if st:
            out[f"adam.exp_avg.{name}"] = st["exp_avg"].detach().clone()
            out[f"adam.exp_avg_sq.{name}"] = st["exp_avg_sq"].detach().clone()
    return out


def _adam_step(opt):
    steps = [int(st["step"]) for st in opt.state.values() if "step" in st]
    return max(steps, default=0)


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    dev_accuracy: float | None


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list[EpochMetrics]
    best_epoch: int | None = None
    best_checkpoint: Checkpoint | None = None

    def __iter__(self):
        yield self.checkpoint
        yield self.metrics

    @property
    def selected(self) -> Checkpoint:
        """Best-dev checkpoint when a dev set was given, else the last one."""
        return self.best_checkpoint or self.checkpoint


def featurize_all(samples, featurizer: Featurizer, workers: int = 1) -> list[SampleFeatures]:
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(featurizer, samples))
    return [featurizer(s) for s in samples]


def make_featurizer(config: TrainConfig) -> Featurizer:
    return Featurizer(config.model, config.features, config.node_cap, config.query_cap)


def write_metrics_csv(metrics, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "train_loss", "dev_accuracy"])
        for m in metrics:
            w.writerow([m.epoch, repr(m.lr), repr(m.train_loss), "" if m.dev_accuracy is None else repr(m.dev_accuracy)])


def train(
    samples: list[Sample],
    config: TrainConfig,
    ablation: Ablation | str | None = None,
    dev: list[Sample] | None = None,
    workers: int = 1,
    features=None,
    dev_features=None,
) -> TrainResult:
    """Mini-batch Adam on mean batch loss with the step size halved every ``halve_every`` epochs.

    Pre-computed ``features`` / ``dev_features`` may be passed to skip featurization.
    """
    if ablation is not None:
        config = make_variant(config, ablation)
    if not samples and features is None:
        raise TrainError("no training samples")
    featurizer = make_featurizer(config)
    if features is None:
        features = featurize_all(samples, featurizer, workers)
    items = [f for f in features if f.answerable]
    if not items:
        raise TrainError("every training sample is unanswerable (gold candidate never mentioned)")
    if len(items) < len(features):
        log.info("skipping %d unanswerable training samples", len(features) - len(items))
    if dev is not None and dev_features is None:
        dev_features = featurize_all(dev, featurizer, workers)

    model = BagModel(config.model, seed=config.seed)
    opt = torch.optim.Adam(
        model.parameters(), lr=config.lr0, betas=(config.adam_beta1, config.adam_beta2), eps=config.adam_eps
    )
    rng = np.random.default_rng(config.seed)
    dropout_gen = torch.Generator().manual_seed(config.seed + 1)

    metrics: list[EpochMetrics] = []
    best_acc, best_epoch, best_state = -1.0, None, None
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        model.train()
        order = rng.permutation(len(items))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = collate([items[i] for i in order[start : start + config.batch_size]])
            opt.zero_grad()
            loss, valid, _ = model.loss(batch, dropout_gen)
            loss.backward()
            opt.step()
            n = int(valid.sum())
            total += float(loss.detach()) * n
            count += n
        dev_acc = None
        if dev_features is not None:
            dev_acc = evaluate_model(model, dev_features).accuracy
            if dev_acc > best_acc:
                best_acc, best_epoch, best_state = dev_acc, epoch, _state_copy(model)
        metrics.append(EpochMetrics(epoch, lr, total / max(count, 1), dev_acc))
        log.info("epoch %d lr %.3g loss %.4f dev %s", epoch, lr, total / max(count, 1), dev_acc)

    rng_state = {
        "numpy": rng.bit_generator.state,
        "torch": base64.b64encode(dropout_gen.get_state().numpy().tobytes()).decode("ascii"),
    }
    last = Checkpoint(
        config=config,
        params=_state_copy(model),
        optimizer=_optimizer_tensors(opt, model),
        adam_step=_adam_step(opt),
        epoch=config.epochs,
        rng=rng_state,
        extra={"best_epoch": best_epoch, "best_dev_accuracy": None if best_epoch is None else best_acc},
    )
    best = None
    if best_state is not None:
        best = Checkpoint(config=config, params=best_state, epoch=best_epoch + 1, rng=rng_state, extra=dict(last.extra))
    return TrainResult(last, metrics, best_epoch, best)


@dataclass
class Prediction:
    id: str
    predicted: int | None
    probs: list[float]
    gold: int | None

    @property
    def correct(self) -> bool:
        return self.predicted is not None and self.gold is not None and self.predicted == self.gold


@dataclass
class EvalResult:
    accuracy: float
    predictions: list[Prediction]


@torch.no_grad()
def evaluate_model(model: BagModel, features: list[SampleFeatures], batch_size: int = 64) -> EvalResult:
    was_training = model.training
    model.eval()
    preds: list[Prediction | None] = [None] * len(features)
    live = [i for i, f in enumerate(features) if len(f.graph) > 0]
    for i, f in enumerate(features):
        if len(f.graph) == 0:
            preds[i] = Prediction(f.sample_id, None, [0.0] * f.n_candidates, f.gold)
    for start in range(0, len(live), batch_size):
        idx = live[start : start + batch_size]
        out = model(collate([features[i] for i in idx]))
        for row, i in enumerate(idx):
            f = features[i]
            probs = out.probs[row, : f.n_candidates]
            # an unmentioned gold candidate has probability 0, so it can never be the argmax
            preds[i] = Prediction(f.sample_id, int(torch.argmax(probs)), probs.tolist(), f.gold)
    model.train(was_training)
    labelled = [p for p in preds if p.gold is not None]
    acc = sum(p.correct for p in labelled) / len(labelled) if labelled else 0.0
    return EvalResult(acc, preds)


def evaluate(checkpoint: Checkpoint, samples: list[Sample], workers: int = 1, features=None) -> EvalResult:
    """Accuracy of argmax candidates; empty graphs and unmentioned gold answers count as wrong."""
    if features is None:
        features = featurize_all(samples, make_featurizer(checkpoint.config), workers)
    return evaluate_model(checkpoint.model(), features)


def predict(checkpoint: Checkpoint, samples: list[Sample], workers: int = 1) -> list[dict]:
    result = evaluate(checkpoint, samples, workers)
    by_id = {s.id: s for s in samples}
    rows = []
    for p in result.predictions:
        cands = by_id[p.id].candidates
        rows.append(
            {
                "id": p.id,
                "predicted_candidate": None if p.predicted is None else cands[p.predicted],
                "probs": p.probs,
            }
        )
    return rows
