"""Command-line entry point: ``xstft {gen-data,verify,analyze,train,eval}``.

Exit codes: 0 success, 1 usage error, 2 verification failure, 3 runtime or
I/O error.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _size(text: str) -> str:
    parts = text.lower().split("x")
    if len(parts) != 2 or not all(p.isdigit() and int(p) > 0 for p in parts):
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    return text.lower()


def _common(p: argparse.ArgumentParser, out_help: str):
    p.add_argument("--variant", choices=("st", "s", "t"), help="STFT block variant")
    p.add_argument("--frames", type=int, help="clip length T")
    p.add_argument("--size", type=_size, help="frame size HxW")
    p.add_argument("--config", type=Path, help="key = value config file (flags override it)")
    p.add_argument("--seed", type=int, help="RNG seed")
    p.add_argument("--out", type=Path, help=out_help)
    p.add_argument("--threads", type=int, default=1, help="BLAS worker threads (1 = deterministic)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xstft", description="STFT-block video networks in numpy")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic direction-of-motion dataset")
    _common(p, "dataset file to write")
    p.add_argument("--samples", type=int, default=2000, help="number of clips")
    p.add_argument("--channels", type=int, default=3)

    p = sub.add_parser("verify", help="run the oracle and invariant suite")
    _common(p, "unused")
    p.add_argument("--quick", action="store_true", help="fewer oracle shapes and gradient probes")

    p = sub.add_parser("analyze", help="parameter and FLOP report")
    _common(p, "CSV file for the per-layer report")
    p.add_argument("--classes", type=int, help="classifier width (default 174)")
    p.add_argument("--detail", action="store_true", help="print every layer")
    p.add_argument("--dump-basis", type=Path, metavar="CSV", help="write the variant's STFT matrix W")

    p = sub.add_parser("train", help="train on dataset files")
    _common(p, "output directory (metrics.csv, best.ckpt, last.ckpt)")
    p.add_argument("--train-data", type=Path, help="training dataset (generated from the config if absent)")
    p.add_argument("--val-data", type=Path, help="validation dataset (generated from the config if absent)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", type=Path, help="checkpoint to resume from")
    p.add_argument("--temporal", choices=("stft", "identity"), help="identity drops the temporal STFT")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p, "unused")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, help="dataset (the config's validation set if absent)")
    p.add_argument("--temporal", choices=("stft", "identity"))
    p.add_argument("--reverse-time", action="store_true", help="also report the label flip rate under frame reversal")
    return parser


def _overrides(args, **extra) -> dict:
    over = {
        "variant": args.variant,
        "frames": args.frames,
        "size": args.size,
        "seed": args.seed,
    }
    over.update(extra)
    return {k: v for k, v in over.items() if v is not None}


def _run_config(args, default_preset: str, **extra):
    from .config import load_config

    text = args.config.read_text(encoding="utf-8") if args.config else f"preset = {default_preset}\n"
    return load_config(text, _overrides(args, **extra))


def _datasets(cfg, args_train=None, args_val=None):
    from .data import gen_direction_dataset, read_dataset

    net, data = cfg.network, cfg.data
    h, w = net.size

    def get(path, seed, count):
        if path is not None:
            return read_dataset(path)
        return gen_direction_dataset(seed, count, net.frames, h, w, net.channels)

    return get(args_train, data.train_seed, data.train_samples), get(args_val, data.val_seed, data.val_samples)


def cmd_gen_data(args) -> int:
    from .data import gen_direction_dataset, write_dataset

    if args.out is None:
        raise UsageError("gen-data needs --out")
    cfg = _run_config(args, "micro")
    h, w = cfg.network.size
    seed = args.seed if args.seed is not None else cfg.data.train_seed
    ds = gen_direction_dataset(seed, args.samples, cfg.network.frames, h, w, args.channels)
    write_dataset(args.out, ds)
    counts = np.bincount(ds.labels, minlength=ds.num_classes).tolist()
    print(f"wrote {len(ds)} clips of {ds.frames}x{h}x{w}x{ds.channels} to {args.out}; class counts {counts}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suite

    results = run_suite(quick=args.quick)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_analyze(args) -> int:
    from .complexity import count_flops
    from .network import build_network

    extra = {"classes": args.classes}
    if args.config is None and args.size is None:
        extra["size"] = "112x112"
    cfg = _run_config(args, "full", **extra)
    spec = cfg.network
    model = build_network(spec)
    report = count_flops(model, spec.input_shape)
    sys.stdout.write(report.render(spec.variant, detail=args.detail))
    if args.out is not None:
        args.out.write_text(report.to_csv())
        print(f"per-layer CSV written to {args.out}")
    if args.dump_basis is not None:
        from .layers import StftDepthwise, named_layers

        basis = next(leaf.basis for _, leaf in named_layers(model) if isinstance(leaf, StftDepthwise))
        rows = [",".join(f"{v:.17g}" for v in row) for row in basis.W]
        args.dump_basis.write_text("\n".join(rows) + "\n")
        print(f"STFT matrix W ({basis.W.shape[0]}x{basis.W.shape[1]}) written to {args.dump_basis}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .network import build_network, init_orthogonal
    from .training import train

    cfg = _run_config(args, "micro", epochs=args.epochs, temporal=args.temporal)
    if args.out is None:
        raise UsageError("train needs --out")
    train_ds, val_ds = _datasets(cfg, args.train_data, args.val_data)
    model = build_network(cfg.network, cfg.train.dtype)
    init_orthogonal(model, cfg.train.seed)
    rows = train(model, train_ds, val_ds, cfg.train, args.out, resume=args.resume, stop_at=cfg.stop_at)
    val = [r for r in rows if r["split"] == "val"]
    if val:
        last = val[-1]
        best = max(float(r["top1"]) for r in val)
        print(f"epoch {last['epoch']}: val loss {float(last['loss']):.4f} top1 {float(last['top1']):.4f} (best {best:.4f})")
    print(f"metrics and checkpoints in {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import Pipeline, read_dataset
    from .network import build_network
    from .training import evaluate, load_model_state, predict, reversal_flip_rate

    cfg = _run_config(args, "micro", temporal=args.temporal)
    spec = cfg.network
    model = load_model_state(build_network(spec, cfg.train.dtype), args.checkpoint)
    ds = read_dataset(args.data) if args.data is not None else _datasets(cfg)[1]
    pipe = Pipeline(spec.frames, spec.size, cfg.train.seed, False, False, cfg.train.dtype)
    res = evaluate(model, ds, pipe, cfg.train.eval_batch_size)
    print(f"loss {res['loss']:.4f} top1 {res['top1']:.4f} top5 {res['top5']:.4f} ({len(ds)} clips)")
    if args.reverse_time:
        preds = predict(model, ds, pipe, cfg.train.eval_batch_size)
        rev = predict(model, ds, pipe, cfg.train.eval_batch_size, reverse_time=True)
        rate, n = reversal_flip_rate(np.asarray(ds.labels), preds, rev)
        print(f"time reversal flips {rate:.4f} of {n} correctly classified up/down clips")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "verify": cmd_verify,
    "analyze": cmd_analyze,
    "train": cmd_train,
    "eval": cmd_eval,
}


@contextlib.contextmanager
def _thread_limit(n: int):
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=max(1, n)):
        yield


def main(argv=None) -> int:
    from .config import ConfigError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"xstft: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with _thread_limit(args.threads):
            return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as err:
        print(f"xstft: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError) as err:
        print(f"xstft: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
