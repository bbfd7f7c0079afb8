"""Command line entry points: train, prune, export-calib."""

import argparse
from pathlib import Path

import numpy as np

from deskcnn_trainer import idx
from deskcnn_trainer.container import export_container, load_container
from deskcnn_trainer.prune_loop import layer_sparsity, prune_and_finetune
from deskcnn_trainer.train import train_model


def _cmd_train(args):
    model, top1 = train_model(
        args.data_dir,
        epochs=args.epochs,
        seed=args.seed,
        label_smoothing=args.label_smoothing,
    )
    print(f"final test top-1: {top1:.4%}")
    export_container(
        model,
        args.out,
        metadata={
            "dataset": "mnist",
            "epochs": args.epochs,
            "seed": args.seed,
            "label_smoothing": args.label_smoothing,
            "fp32_top1": round(top1, 6),
        },
    )
    print(f"exported container to {args.out}")


def _cmd_prune(args):
    model, manifest = load_container(args.container)
    model, top1 = prune_and_finetune(
        model,
        args.data_dir,
        target_sparsity=args.sparsity,
        steps=args.steps,
        seed=args.seed,
        label_smoothing=args.label_smoothing,
    )
    meta = dict(manifest.get("metadata", {}))
    meta.update(
        {
            "pruned_from": str(args.container),
            "target_sparsity": args.sparsity,
            "layer_sparsity": {
                k: round(v, 6) for k, v in layer_sparsity(model).items()
            },
            "pruned_top1": round(top1, 6),
        }
    )
    export_container(model, args.out, metadata=meta)
    print(f"exported pruned container to {args.out}")


def _cmd_export_calib(args):
    images = idx.read_images(Path(args.data_dir) / "train-images-idx3-ubyte.gz")
    labels = idx.read_labels(Path(args.data_dir) / "train-labels-idx1-ubyte.gz")
    rng = np.random.default_rng(args.seed)
    sel = rng.choice(len(images), size=args.count, replace=False)
    sel.sort()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    idx.write_images(out / "calib-images-idx3-ubyte.gz", images[sel])
    idx.write_labels(out / "calib-labels-idx1-ubyte.gz", labels[sel])
    print(f"wrote {args.count} calibration images to {out}")


def main(argv=None):
    ap = argparse.ArgumentParser(prog="deskcnn-trainer")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("train", help="train DeskCNN on MNIST and export it")
    p.add_argument("--data-dir", default="fixtures/mnist")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label-smoothing", type=float, default=0.0)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("prune", help="magnitude-prune a trained model")
    p.add_argument("--container", required=True)
    p.add_argument("--data-dir", default="fixtures/mnist")
    p.add_argument("--out", required=True)
    p.add_argument("--sparsity", type=float, default=0.4)
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label-smoothing", type=float, default=0.0)
    p.set_defaults(fn=_cmd_prune)

    p = sub.add_parser(
        "export-calib", help="sample a calibration subset as idx files"
    )
    p.add_argument("--data-dir", default="fixtures/mnist")
    p.add_argument("--out", default="fixtures/mnist")
    p.add_argument("--count", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_export_calib)

    args = ap.parse_args(argv)
    args.fn(args)


if __name__ == "__main__":
    main()
