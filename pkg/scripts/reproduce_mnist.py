"""Desk-scale MNIST comparison of LeNet and AnaNN-LeNet.

Trains both networks under one shared SGD config on the full training set
and on its first 10,000 images, and reports final test accuracy.

    python scripts/reproduce_mnist.py --data-dir data/mnist --out results/mnist.json
"""

import argparse
import json
import time
from pathlib import Path

from analytic_conv import dataio, nncore

SUBSET = 10_000


def run(net_name: str, train, test, config: nncore.TrainConfig) -> dict:
    net = nncore.anann_lenet(seed=config.seed) if net_name == "anann-lenet" else nncore.lenet(seed=config.seed)
    t0 = time.time()
    history = nncore.train(net, train, config, test)
    return {
        "net": net_name,
        "train_size": len(train),
        "epochs": config.epochs,
        "test_accuracy": history[-1]["test_accuracy"],
        "history": history,
        "seconds": round(time.time() - t0, 1),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data-dir", default="data/mnist")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--subset-epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results/mnist.json")
    args = p.parse_args(argv)

    train = dataio.load_mnist(args.data_dir, "train")
    test = dataio.load_mnist(args.data_dir, "t10k")
    results = []
    for data, epochs in ((train.subset(SUBSET), args.subset_epochs), (train, args.epochs)):
        config = nncore.TrainConfig(args.lr, args.batch, epochs, args.seed)
        for name in ("anann-lenet", "lenet"):
            r = run(name, data, test, config)
            print(f"{name:12s} train={r['train_size']:6d} epochs={epochs:2d} "
                  f"test_acc={r['test_accuracy']:.4f} ({r['seconds']}s)", flush=True)
            results.append(r)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataio.atomic_write(out, (json.dumps(results, indent=1) + "\n").encode())


if __name__ == "__main__":
    main()
