"""A small layer-list network stack for training LeNet-style models.

Each layer caches what it needs during ``forward`` and returns the input
gradient from ``backward``; parameter gradients stay on the layer until
``step`` applies them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import arrangement as arr
from .acl import AclGradients, AclLayer, output_size
from .kernels import KernelFamily

EXP3_RATIOS = "G0.1562Lg0.0781Lt0.0781Tf0.1875P0.5"


class ShapeError(ValueError):
    pass


class Conv:
    kind = "acl"

    def __init__(self, layer: AclLayer):
        self.acl = layer
        self.needs_input_grad = True
        self.grads: AclGradients | None = None
        self._x = None

    def forward(self, x):
        self._x = x
        return self.acl.forward(x)

    def backward(self, g):
        dW = self.acl.weight_grad(self._x, g)
        self.grads = AclGradients(self.acl.akp_grads(dW), g.sum(axis=(0, 2, 3)))
        if not self.needs_input_grad:
            return None
        return self.acl.input_grad(self._x.shape, g)

    def step(self, lr):
        self.acl.apply_update(self.grads, lr)

    def output_shape(self, shape):
        a = self.acl.arrangement
        if len(shape) != 3 or shape[0] != a.in_channels:
            raise ShapeError(f"expects ({a.in_channels}, H, W), got {shape}")
        h, w = a.kernel_size
        hyper = self.acl.stride, self.acl.padding, self.acl.dilation
        out = (a.out_channels, output_size(shape[1], h, *hyper), output_size(shape[2], w, *hyper))
        if min(out[1:]) < 1:
            raise ShapeError(f"input {shape} too small")
        return out

    def config(self):
        a = self.acl.arrangement
        return {
            "type": "acl",
            "pattern": arr.serialize(a),
            "kernel_size": list(a.kernel_size),
            "stride": self.acl.stride,
            "padding": self.acl.padding,
            "dilation": self.acl.dilation,
        }

    def state(self):
        out = {"bias": self.acl.bias}
        for fam, a in self.acl.akps.items():
            out[f"akps.{fam.code}"] = a
        return out


class ReLU:
    kind = "relu"

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, g):
        return np.where(self._mask, g, 0.0)

    def output_shape(self, shape):
        return shape

    def config(self):
        return {"type": "relu"}


class MaxPool:
    """Max pooling; ties go to the lowest flat index inside the window."""

    kind = "maxpool"

    def __init__(self, k: int = 2, s: int = 2):
        self.k, self.s = k, s

    def forward(self, x):
        k, s = self.k, self.s
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        flat = win.reshape(*win.shape[:4], k * k)
        self._arg = flat.argmax(axis=-1)
        self._shape = x.shape
        return np.take_along_axis(flat, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, g):
        k, s = self.k, self.s
        b, c, ho, wo = g.shape
        di, dj = np.divmod(self._arg, k)
        rows = np.arange(ho)[:, None] * s + di
        cols = np.arange(wo)[None, :] * s + dj
        dx = np.zeros(self._shape)
        bi = np.arange(b)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        if k <= s:  # windows do not overlap
            dx[bi, ci, rows, cols] = g
        else:
            np.add.at(dx, (bi, ci, rows, cols), g)
        return dx

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"expects (C, H, W), got {shape}")
        out = (shape[0], (shape[1] - self.k) // self.s + 1, (shape[2] - self.k) // self.s + 1)
        if min(out[1:]) < 1:
            raise ShapeError(f"input {shape} smaller than the pooling window")
        return out

    def config(self):
        return {"type": "maxpool", "k": self.k, "s": self.s}


class Flatten:
    kind = "flatten"

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def config(self):
        return {"type": "flatten"}


class Linear:
    kind = "linear"

    def __init__(self, n_in: int, n_out: int, rng=None, weight=None, bias=None):
        self.n_in, self.n_out = n_in, n_out
        if weight is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            bound = 1.0 / np.sqrt(n_in)
            weight = rng.uniform(-bound, bound, size=(n_in, n_out))
        self.weight = np.array(weight, dtype=np.float64).reshape(n_in, n_out)
        self.bias = np.zeros(n_out) if bias is None else np.array(bias, dtype=np.float64).reshape(n_out)

    def forward(self, x):
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, g):
        self.dweight = self._x.T @ g
        self.dbias = g.sum(axis=0)
        return g @ self.weight.T

    def step(self, lr):
        self.weight -= lr * self.dweight
        self.bias -= lr * self.dbias

    def output_shape(self, shape):
        if shape != (self.n_in,):
            raise ShapeError(f"expects ({self.n_in},), got {shape}")
        return (self.n_out,)

    def config(self):
        return {"type": "linear", "in": self.n_in, "out": self.n_out}

    def state(self):
        return {"weight": self.weight, "bias": self.bias}


class Network:
    def __init__(self, layers: list, input_shape: tuple[int, ...] | None = None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape) if input_shape is not None else None
        kinds = [layer.kind for layer in self.layers]
        if "linear" in kinds:
            first = kinds.index("linear")
            if kinds[:first].count("flatten") != 1:
                raise ShapeError("need exactly one flatten before the first linear layer")
        for layer in self.layers:
            if layer.kind == "acl":
                layer.needs_input_grad = layer is not self.layers[0]
        if self.input_shape is not None:
            self.output_shape(self.input_shape)

    def output_shape(self, shape):
        shape = tuple(shape)
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer.kind}): {e}") from None
        return shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x)
            except ValueError as e:
                raise ShapeError(f"layer {i} ({layer.kind}): {e}") from None
        return x

    def backward(self, g: np.ndarray) -> np.ndarray | None:
        for layer in reversed(self.layers):
            g = layer.backward(g)
            if g is None:
                break
        return g

    def step(self, lr: float) -> None:
        for layer in self.layers:
            if hasattr(layer, "step"):
                layer.step(lr)

    def acl_layers(self) -> list[AclLayer]:
        return [layer.acl for layer in self.layers if layer.kind == "acl"]


def net_forward(net: Network, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def softmax_ce(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy.

    A 1-D ``logits`` with an integer label gives that sample's loss; a 2-D
    batch gives the mean loss, and the gradient is scaled to match.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    z = logits[None, :] if single else logits
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z - logsum[:, None]
    n = z.shape[0]
    loss = -logp[np.arange(n), y]
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    if single:
        return float(loss[0]), grad[0]
    return float(loss.mean()), grad / n


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float64
    labels: np.ndarray  # (N,) int64

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n])


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    schedule: str = "linear"  # "linear" decays the step to 0 over all epochs

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError(f"invalid training config {self}")
        if self.schedule not in ("constant", "linear"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def step_size(self, epoch: int, frac: float) -> float:
        """Learning rate at fraction ``frac`` of the way through ``epoch``."""
        if self.schedule == "constant" or self.epochs == 0:
            return self.lr
        return self.lr * max(0.0, 1.0 - (epoch + frac) / self.epochs)


def sgd_epoch(net: Network, data: Dataset, config: TrainConfig, epoch: int = 0) -> dict:
    """One pass of minibatch SGD; returns mean training loss and accuracy.

    The shuffle order depends only on ``(config.seed, epoch)``.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    order = np.random.default_rng([config.seed, epoch]).permutation(len(data))
    total_loss = 0.0
    correct = 0
    for start in range(0, len(data), config.batch_size):
        idx = order[start : start + config.batch_size]
        lr = config.step_size(epoch, start / len(data))
        logits = net.forward(data.images[idx])
        loss, grad = softmax_ce(logits, data.labels[idx])
        total_loss += loss * len(idx)
        correct += int((logits.argmax(axis=1) == data.labels[idx]).sum())
        if lr > 0:
            net.backward(grad)
            net.step(lr)
    return {"loss": total_loss / len(data), "accuracy": correct / len(data)}


def train(net: Network, data: Dataset, config: TrainConfig, test: Dataset | None = None, on_epoch=None) -> list[dict]:
    """Run ``config.epochs`` epochs; one metrics record per epoch.

    ``on_epoch(record)`` is called after each epoch, e.g. to stream metrics.
    """
    history = []
    for epoch in range(config.epochs):
        record = {"epoch": epoch + 1}
        record.update({f"train_{k}": v for k, v in sgd_epoch(net, data, config, epoch).items()})
        if test is not None:
            record.update({f"test_{k}": v for k, v in evaluate_metrics(net, test).items()})
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return history


def predict(net: Network, images: np.ndarray, batch_size: int = 1000) -> np.ndarray:
    out = [net.forward(images[i : i + batch_size]) for i in range(0, len(images), batch_size)]
    return np.concatenate(out)


def evaluate_metrics(net: Network, data: Dataset, batch_size: int = 1000) -> dict:
    logits = predict(net, data.images, batch_size)
    loss, _ = softmax_ce(logits, data.labels)
    return {"loss": loss, "accuracy": float((logits.argmax(axis=1) == data.labels).mean())}


def evaluate(net: Network, data: Dataset, batch_size: int = 1000) -> float:
    """Top-1 accuracy; does not touch parameters."""
    return evaluate_metrics(net, data, batch_size)["accuracy"]


def build_layer(cfg: dict, rng: np.random.Generator, state: dict | None = None):
    kind = cfg["type"]
    if kind == "acl":
        ks = tuple(cfg["kernel_size"])
        a = arr.parse_pattern(cfg["pattern"], ks)
        if not isinstance(a, arr.Arrangement):
            raise ValueError(f"layer pattern must be in count form, got {cfg['pattern']!r}")
        akps = bias = None
        if state is not None:
            akps = {fam: state[f"akps.{fam.code}"] for fam in set(a.flatten())}
            bias = state["bias"]
        hyper = {k: cfg.get(k, d) for k, d in (("stride", 1), ("padding", 0), ("dilation", 1))}
        return Conv(AclLayer(a, akps, bias, seed=rng, **hyper))
    if kind == "relu":
        return ReLU()
    if kind == "maxpool":
        return MaxPool(cfg.get("k", 2), cfg.get("s", 2))
    if kind == "flatten":
        return Flatten()
    if kind == "linear":
        if state is not None:
            return Linear(cfg["in"], cfg["out"], weight=state["weight"], bias=state["bias"])
        return Linear(cfg["in"], cfg["out"], rng)
    raise ValueError(f"unknown layer type {kind!r}")


def build_network(defs: list[dict], input_shape=None, seed: int = 0, states=None) -> Network:
    rng = np.random.default_rng(seed)
    states = states or [None] * len(defs)
    return Network([build_layer(d, rng, s) for d, s in zip(defs, states)], input_shape)


LENET_WIDTHS = (8, 16)


def lenet_defs(arrangement: str | None = None, widths=LENET_WIDTHS, kernel_size: int = 5) -> list[dict]:
    """Layer definitions for LeNet on 1x28x28 inputs.

    ``arrangement`` is None for plain convolutions, a ratio pattern applied to
    both convolutional layers, or two comma-separated count patterns.
    """
    c1, c2 = widths
    ks = (kernel_size, kernel_size)
    shapes = [(1, c1), (c1, c2)]
    if arrangement is None:
        patterns = [arr.serialize(arr.Arrangement(ci, co, ks, ((KernelFamily.PLAIN, ci * co),)))
                    for ci, co in shapes]
    else:
        parts = [p.strip() for p in arrangement.split(",")]
        if len(parts) == 1:
            parts = parts * 2
        if len(parts) != 2:
            raise arr.ArrangementError(f"expected one or two patterns, got {len(parts)}")
        patterns = [arr.serialize(arr.resolve(p, ci, co, ks)) for p, (ci, co) in zip(parts, shapes)]
    spatial = (28 + 2 * 2 - kernel_size + 1) // 2
    spatial = (spatial - kernel_size + 1) // 2
    return [
        {"type": "acl", "pattern": patterns[0], "kernel_size": list(ks), "padding": 2},
        {"type": "relu"},
        {"type": "maxpool", "k": 2, "s": 2},
        {"type": "acl", "pattern": patterns[1], "kernel_size": list(ks)},
        {"type": "relu"},
        {"type": "maxpool", "k": 2, "s": 2},
        {"type": "flatten"},
        {"type": "linear", "in": c2 * spatial * spatial, "out": 120},
        {"type": "relu"},
        {"type": "linear", "in": 120, "out": 84},
        {"type": "relu"},
        {"type": "linear", "in": 84, "out": 10},
    ]


def lenet(arrangement: str | None = None, seed: int = 0, widths=LENET_WIDTHS) -> Network:
    return build_network(lenet_defs(arrangement, widths), (1, 28, 28), seed)


def anann_lenet(arrangement: str = EXP3_RATIOS, seed: int = 0, widths=LENET_WIDTHS) -> Network:
    return lenet(arrangement, seed, widths)
