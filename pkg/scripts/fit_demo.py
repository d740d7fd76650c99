"""Fit Gabor kernels to three 7x7 weight matrices and report the AKP budget.

Targets are either the first three kernels of a checkpoint's first ACL or,
by default, three noisy Gabor-like matrices standing in for one RGB filter.
Writes the JSON report and a side-by-side PGM (targets on top, fits below).

    python scripts/fit_demo.py --out results/fit_demo
    python scripts/fit_demo.py --ckpt runs/lenet.ckpt --family Lg
"""

import argparse
import json
from pathlib import Path

import numpy as np

from analytic_conv import dataio
from analytic_conv.fitting import FitProblem, fit, fit_report
from analytic_conv.kernels import KernelFamily, KernelSpec, sample


def synthetic_targets(seed: int, noise: float) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    out = []
    for theta in (0.3, 1.1, 2.0):
        k = sample(KernelSpec(KernelFamily.GABOR, np.array([4.0, theta, 0.5, 1.6]), (7, 7)))
        out.append(k + noise * rng.normal(size=k.shape))
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--ckpt")
    p.add_argument("--family", default="G")
    p.add_argument("--restarts", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results/fit_demo")
    args = p.parse_args(argv)

    if args.ckpt:
        bank = dataio.load_checkpoint(args.ckpt).acl_layers()[0].materialize()
        targets = list(bank.reshape(-1, *bank.shape[2:])[:3])
    else:
        targets = synthetic_targets(args.seed, args.noise)
    family = KernelFamily.from_code(args.family)
    result = fit(FitProblem(targets, family, restarts=args.restarts, seed=args.seed))
    report = fit_report(result)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataio.atomic_write(out.with_suffix(".json"), (json.dumps(report, indent=2) + "\n").encode())
    fits = [sample(s) for s in result.specs]
    h, w = targets[0].shape
    img = np.full((2 * h + 3, len(targets) * (w + 1) + 1), 255, dtype=np.uint8)
    for i, (t, f) in enumerate(zip(targets, fits)):
        c = 1 + i * (w + 1)
        img[1 : 1 + h, c : c + w] = dataio.normalize_tile(t)
        img[2 + h : 2 + 2 * h, c : c + w] = dataio.normalize_tile(f)
    dataio.atomic_write(out.with_suffix(".pgm"), dataio.encode_pnm(np.kron(img, np.ones((8, 8), dtype=np.uint8))))

    for t in report["targets"]:
        print(f"rmse={t['rmse']:.2e}  " + "  ".join(f"{k}={v:.3f}" for k, v in t["akps"].items()))
    print(f"{report['akp_total']} AKPs for {report['param_total']} weights, "
          f"compression ratio {report['compression_ratio']:.4f}")


if __name__ == "__main__":
    main()
