"""Command-line entry point: ``analytic-conv <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import arrangement as arr
from . import dataio, fitting, gradcheck, nncore
from .kernels import KernelFamily

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class UserError(Exception):
    pass


def _echo_config(args: argparse.Namespace) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print("config: " + json.dumps(cfg, default=str), file=sys.stderr)


def _thread_cap():
    raw = os.environ.get("ANALYTIC_CONV_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UserError(f"ANALYTIC_CONV_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UserError("ANALYTIC_CONV_THREADS must be >= 1")
    return n


def cmd_compact(args) -> int:
    ks = (args.kernel_size, args.kernel_size)
    a = arr.parse_pattern(args.arrangement, ks)
    if isinstance(a, arr.RatioArrangement):
        if a.in_channels is None:
            raise UserError("ratio patterns need a (CixCo) prefix to compute a compact factor")
        a = arr.bind_ratios(a, a.in_channels, a.out_channels, ks)
    print(f"{arr.compact_factor(a):.4f}")
    return EXIT_OK


def _append_jsonl(path: Path, record: dict) -> None:
    with open(path, "a") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    if args.net == "lenet" and args.arrangement is not None:
        raise UserError("--arrangement only applies to --net anann-lenet")
    pattern = None
    if args.net == "anann-lenet":
        pattern = args.arrangement or nncore.EXP3_RATIOS
    config = nncore.TrainConfig(args.lr, args.batch, args.epochs, args.seed, args.schedule)
    net = nncore.lenet(pattern, seed=args.seed)
    try:
        train = dataio.load_mnist(args.data_dir, "train")
    except FileNotFoundError as e:
        raise UserError(str(e)) from None
    if args.train_limit:
        train = train.subset(args.train_limit)
    try:
        test = dataio.load_mnist(args.data_dir, "t10k")
    except FileNotFoundError:
        test = None

    out = Path(args.out)
    metrics_path = Path(args.metrics) if args.metrics else out.with_suffix(".metrics.jsonl")
    metrics_path.parent.mkdir(parents=True, exist_ok=True)
    tmp_metrics = metrics_path.with_name(f".{metrics_path.name}.tmp")
    tmp_metrics.write_text("")
    patterns = [arr.serialize(a.arrangement) for a in net.acl_layers()]
    print(f"layers: {patterns}", file=sys.stderr)
    clock = [time.time()]

    def on_epoch(record):
        _append_jsonl(tmp_metrics, record)
        now = time.time()
        print(json.dumps(record, sort_keys=True) + f"  ({now - clock[0]:.1f}s)", file=sys.stderr)
        clock[0] = now

    history = nncore.train(net, train, config, test, on_epoch)
    os.replace(tmp_metrics, metrics_path)
    meta = {
        "net": args.net,
        "patterns": patterns,
        "seed": args.seed,
        "epochs": config.epochs,
        "lr": config.lr,
        "batch_size": config.batch_size,
        "schedule": config.schedule,
        "train_size": len(train),
        "final": history[-1] if history else None,
    }
    dataio.save_checkpoint(net, out, meta)
    return EXIT_OK


def cmd_eval(args) -> int:
    net = dataio.load_checkpoint(args.ckpt)
    try:
        data = dataio.load_mnist(args.data_dir, args.split)
    except FileNotFoundError as e:
        raise UserError(str(e)) from None
    print(f"{nncore.evaluate(net, data):.4f}")
    return EXIT_OK


def cmd_fit(args) -> int:
    family = KernelFamily.from_code(args.family)
    targets = dataio.load_kernel_matrices(args.targets)
    problem = fitting.FitProblem(
        targets, family, args.restarts, args.max_iters, seed=args.seed, method=args.method
    )
    report = fitting.fit_report(fitting.fit(problem))
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        dataio.atomic_write(args.out, (text + "\n").encode())
    print(text)
    return EXIT_OK


def _parse_layout(text):
    if text is None:
        return None
    try:
        r, c = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UserError(f"layout must look like ROWSxCOLS, got {text!r}") from None
    return r, c


def cmd_render(args) -> int:
    net = dataio.load_checkpoint(args.ckpt)
    layers = net.acl_layers()
    if not 0 <= args.layer < len(layers):
        raise UserError(f"layer index {args.layer} out of range: checkpoint has {len(layers)} ACLs")
    dataio.render_kernels(layers[args.layer], args.out, _parse_layout(args.layout), args.mode, args.scale)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    ks = (args.kernel_size, args.kernel_size)
    a = arr.parse_pattern(args.arrangement, ks)
    if isinstance(a, arr.RatioArrangement):
        if a.in_channels is None:
            raise UserError("ratio patterns need a (CixCo) prefix for gradcheck")
        a = arr.bind_ratios(a, a.in_channels, a.out_channels, ks)
    fault = KernelFamily.from_code(args.inject_fault) if args.inject_fault else None
    rows = gradcheck.run_gradcheck(a, args.seed, args.points, args.tolerance, fault)
    print(f"{'family':<8} {'akps':>5} {'max_rel_err':>12}  result")
    for r in rows:
        if r.n_akps == 0:
            print(f"{r.family.value:<8} {0:>5} {'-':>12}  pass (no AKPs)")
        else:
            status = "pass" if r.passed else "FAIL"
            print(f"{r.family.value:<8} {r.n_akps:>5} {r.max_rel_error:>12.3e}  {status}")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_USER


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="analytic-conv", description="Analytic convolutional layers.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train LeNet or AnaNN-LeNet on MNIST")
    t.add_argument("--net", choices=["lenet", "anann-lenet"], default="anann-lenet")
    t.add_argument("--arrangement", help="ratio pattern for both ACLs, or two count patterns joined by ','")
    t.add_argument("--data-dir", required=True)
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--schedule", choices=["linear", "constant"], default="linear")
    t.add_argument("--train-limit", type=int, default=None, help="use the first N training images")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--metrics", help="JSON-lines metrics path (default: <out>.metrics.jsonl)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="test accuracy of a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data-dir", required=True)
    e.add_argument("--split", choices=["train", "t10k"], default="t10k")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("fit", help="fit analytic kernels to target matrices")
    f.add_argument("--targets", required=True, help=".npy or .json kernel matrices")
    f.add_argument("--family", required=True, choices=[c.code for c in KernelFamily])
    f.add_argument("--restarts", type=int, default=16)
    f.add_argument("--max-iters", type=int, default=500)
    f.add_argument("--method", choices=["gn", "gd"], default="gn")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", help="write the JSON report here as well")
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("render", help="write a layer's kernels as PGM/PPM")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--layer", type=int, default=0, help="index among the ACLs, from 0")
    r.add_argument("--out", required=True)
    r.add_argument("--layout", help="ROWSxCOLS tile grid")
    r.add_argument("--mode", choices=["gray", "rgb", "rgb-combined"])
    r.add_argument("--scale", type=int, default=8)
    r.set_defaults(func=cmd_render)

    c = sub.add_parser("compact", help="compact factor of an arrangement")
    c.add_argument("--arrangement", required=True)
    c.add_argument("--kernel-size", type=int, default=7)
    c.set_defaults(func=cmd_compact)

    g = sub.add_parser("gradcheck", help="check AKP gradients against finite differences")
    g.add_argument("--arrangement", default=gradcheck.DEFAULT_PATTERN)
    g.add_argument("--kernel-size", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--points", type=int, default=3)
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--inject-fault", choices=[c.code for c in KernelFamily],
                   help="flip one family's analytic gradient (harness self-test)")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USER
    _echo_config(args)
    try:
        cap = _thread_cap()
        if cap is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(cap):
                return args.func(args)
        return args.func(args)
    except (UserError, ValueError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    except Exception as e:  # invariant violations and bugs
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
