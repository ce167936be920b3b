"""Train / export command-line entry point, mirroring the engine CLI style."""

from __future__ import annotations

import argparse
import json
import sys

import torch

from .export import export_model, write_weight_file
from .train import TrainConfig, train


def cmd_train(args) -> int:
    cfg = TrainConfig(data_path=args.data, epochs=args.epochs,
                      batch_size=args.batch, lr=args.lr, seed=args.seed,
                      limit=args.limit, channels=tuple(args.channels),
                      num_classes=args.num_classes)
    result = train(cfg)
    if args.out:
        blob = write_weight_file(export_model(result.net))
        with open(args.out, "wb") as f:
            f.write(blob)
    if args.checkpoint:
        torch.save(result.net.state_dict(), args.checkpoint)
    print(json.dumps({
        "epochs": cfg.epochs,
        "epoch_losses": result.epoch_losses,
        "val_accuracies": result.val_accuracies,
        "best_epoch": result.best_epoch,
        "out": args.out,
    }))
    return 0


def cmd_export(args) -> int:
    from .model import StagedQuantNet

    net = StagedQuantNet(tuple(args.channels), num_classes=args.num_classes)
    if args.checkpoint:
        net.load_state_dict(torch.load(args.checkpoint, weights_only=True))
    else:
        torch.manual_seed(args.seed)  # Xavier-initialized export
        net = StagedQuantNet(tuple(args.channels), num_classes=args.num_classes)
    blob = write_weight_file(export_model(net))
    with open(args.out, "wb") as f:
        f.write(blob)
    print(json.dumps({"out": args.out, "bytes": len(blob)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ahcnn-train")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="joint quantization-aware training")
    p.add_argument("--data", required=True, help="CIFAR binary batch file")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--channels", type=int, nargs=3, default=[8, 16, 32])
    p.add_argument("--num-classes", type=int, default=10)
    p.add_argument("--out", default=None, help="engine weight file")
    p.add_argument("--checkpoint", default=None, help="torch state dict path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export", help="export a checkpoint (or fresh init)")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, nargs=3, default=[8, 16, 32])
    p.add_argument("--num-classes", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:
        json.dump({"error": type(e).__name__, "message": str(e)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
