"""Command-line front end: ``bagnet <command> [flags]``.

Exit status: 0 on success, 2 for usage errors (bad flags, unreadable inputs,
bad config), 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import Ablation, ConfigError, TrainConfig, make_variant, read_config_file, small_config
from .data import DataError, SyntheticConfig, apply_mask, generate_synthetic, load_wikihop, save_wikihop
from .graph import build_graph

log = logging.getLogger("bagnet")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _write_meta(path, payload) -> None:
    Path(str(path) + ".meta.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def effective_config(args) -> TrainConfig:
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = TrainConfig()
    if getattr(args, "config", None):
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        cfg = cfg.updated(read_config_file(args.config))
    flags = {}
    if getattr(args, "seed", None) is not None:
        flags["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        flags["epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        flags["lr0"] = args.lr
    if getattr(args, "ablation", None):
        flags["ablation"] = args.ablation
    return cfg.updated(flags)


def _load(path, mask=False):
    if not path or not Path(path).is_file():
        raise UsageError(f"data file not found: {path}")
    samples = load_wikihop(path)
    return [apply_mask(s) for s in samples] if mask else samples


def _need(args, *names):
    for name in names:
        if not getattr(args, name, None):
            raise UsageError(f"--{name.replace('_', '-')} is required for {args.command}")


# --------------------------------------------------------------------------
# commands


def cmd_synth(args):
    _need(args, "out")
    cfg = SyntheticConfig(
        n_entities=args.n_entities,
        n_relations=args.n_relations,
        n_distractor_docs=args.distractors,
        n_candidates=args.n_candidates,
        hops=args.hops,
        n_samples=args.n_samples,
        seed=args.seed if args.seed is not None else 0,
    )
    samples = generate_synthetic(cfg)
    save_wikihop(samples, args.out)
    _write_meta(args.out, {"command": "synth", "config": dataclasses.asdict(cfg), "seed": cfg.seed})
    print(f"wrote {len(samples)} samples to {args.out}")


def cmd_build_graph(args):
    _need(args, "data", "out")
    cfg = effective_config(args)
    samples = _load(args.data, args.mask)
    graphs = []
    for s in samples:
        g = build_graph(s, cfg.node_cap)
        graphs.append({"id": s.id, **g.to_json()})
    payload = {"config": cfg.to_flat(), "seed": cfg.seed, "mask": args.mask, "graphs": graphs}
    Path(args.out).write_text(json.dumps(payload) + "\n", encoding="utf-8")
    empty = sum(1 for g in graphs if not g["nodes"])
    print(f"wrote {len(graphs)} graphs to {args.out} ({empty} empty)")


def cmd_train(args):
    from .trainer import train, write_metrics_csv

    _need(args, "data", "out")
    cfg = effective_config(args)
    samples = _load(args.data, args.mask)
    dev = _load(args.dev, args.mask) if args.dev else None
    result = train(samples, cfg, dev=dev, workers=args.workers)
    ckpt = result.selected
    ckpt.save(args.out)
    metrics_path = args.metrics or str(args.out) + ".metrics.csv"
    write_metrics_csv(result.metrics, metrics_path)
    _write_meta(metrics_path, {"command": "train", "config": cfg.to_flat(), "seed": cfg.seed,
                               "best_epoch": result.best_epoch, "checkpoint": str(args.out)})
    last = result.metrics[-1] if result.metrics else None
    print(f"saved checkpoint to {args.out}; metrics in {metrics_path}")
    if last is not None:
        print(f"final train loss {last.train_loss:.4f}" + (f", dev accuracy {last.dev_accuracy:.4f}" if last.dev_accuracy is not None else ""))
    if result.best_epoch is not None:
        print(f"best dev accuracy {ckpt.extra['best_dev_accuracy']:.4f} at epoch {result.best_epoch}")


def _checkpoint(args):
    from .trainer import Checkpoint, CheckpointError

    _need(args, "checkpoint")
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    try:
        return Checkpoint.load(args.checkpoint)
    except CheckpointError as exc:
        raise UsageError(str(exc)) from exc


def cmd_evaluate(args):
    from .trainer import evaluate

    _need(args, "data")
    ckpt = _checkpoint(args)
    result = evaluate(ckpt, _load(args.data, args.mask), workers=args.workers)
    print(f"accuracy {result.accuracy:.4f} ({sum(p.correct for p in result.predictions)}/{len(result.predictions)})")


def cmd_predict(args):
    from .trainer import predict

    _need(args, "data", "out")
    ckpt = _checkpoint(args)
    rows = predict(ckpt, _load(args.data, args.mask), workers=args.workers)
    with open(args.out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    _write_meta(args.out, {"command": "predict", "config": ckpt.config.to_flat(), "seed": ckpt.config.seed,
                           "checkpoint": str(args.checkpoint)})
    print(f"wrote {len(rows)} predictions to {args.out}")


def cmd_ablate(args):
    from .trainer import evaluate_model, featurize_all, make_featurizer, train

    _need(args, "data")
    cfg = effective_config(args)
    samples = _load(args.data, args.mask)
    if args.dev:
        train_set, test_set = samples, _load(args.dev, args.mask)
    else:
        cut = max(1, int(round(len(samples) * 0.8)))
        train_set, test_set = samples[:cut], samples[cut:]
        if not test_set:
            raise UsageError("need at least two samples to split train/test; pass --dev")
    rows = []
    for variant in Ablation:
        vcfg = make_variant(cfg, variant)
        featurizer = make_featurizer(vcfg)
        test_feats = featurize_all(test_set, featurizer, args.workers)
        result = train(train_set, vcfg, dev_features=test_feats, workers=args.workers)
        model = result.selected.model()
        acc = evaluate_model(model, test_feats).accuracy
        rows.append((variant.value, acc, result.best_epoch))
        print(f"{variant.value:<18} {acc:.4f}", flush=True)
    out = args.out or "ablation.csv"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("variant,accuracy,best_epoch\n")
        for name, acc, epoch in rows:
            fh.write(f"{name},{acc!r},{'' if epoch is None else epoch}\n")
    _write_meta(out, {"command": "ablate", "config": cfg.to_flat(), "seed": cfg.seed, "data": str(args.data)})
    print(f"wrote {len(rows)} rows to {out}")


def cmd_gradcheck(args):
    from .gradcheck import check_model

    if args.dims == "small":
        cfg = small_config()
    else:
        cfg = TrainConfig()
    cfg = cfg.updated({"seed": args.seed or 0})
    variant = Ablation.parse(args.ablation) if args.ablation else Ablation.FULL
    err = check_model(variant, cfg, probe_count=args.probes, step=args.step, seed=args.seed or 0)
    print(f"{err:.3e}")
    return EXIT_OK if err < args.tol else EXIT_RUNTIME


COMMANDS = {
    "synth": cmd_synth,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bagnet", description="Entity-graph multi-hop QA with gated R-GCN and bi-attention.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        if data:
            p.add_argument("--data")
            p.add_argument("--mask", action="store_true", help="apply the candidate mask transform")
        p.add_argument("--out")
        p.add_argument("--config", help="flat key = value file; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, default=1)
        return p

    p = common(sub.add_parser("synth", help="write a synthetic multi-hop dataset"), data=False)
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--n-entities", type=int, default=20)
    p.add_argument("--n-relations", type=int, default=4)
    p.add_argument("--n-candidates", type=int, default=5)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--distractors", type=int, default=2)

    common(sub.add_parser("build-graph", help="serialize entity graphs"))

    for name in ("train", "ablate"):
        p = common(sub.add_parser(name, help=f"{name} on a dataset"))
        p.add_argument("--dev")
        p.add_argument("--ablation")
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        if name == "train":
            p.add_argument("--metrics")

    for name in ("evaluate", "predict"):
        p = common(sub.add_parser(name, help=f"{name} with a checkpoint"))
        p.add_argument("--checkpoint")

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--dims", choices=("small", "full"), default="small")
    p.add_argument("--ablation")
    p.add_argument("--probes", type=int, default=100)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        status = COMMANDS[args.command](args)
        return EXIT_OK if status is None else status
    except (UsageError, ConfigError) as exc:
        print(f"bagnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"bagnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.debug("failure", exc_info=True)
        print(f"bagnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
