"""Analytic convolutional layer.

The layer owns AKPs grouped by kernel family. Kernel ``k`` of the flattened
arrangement sits at output channel ``k // Ci`` and input channel ``k % Ci``
of the ``(Co, Ci, h, w)`` weight bank.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .arrangement import Arrangement
from .kernels import (
    POSITIVE_AKPS,
    KernelFamily,
    KernelSpec,
    init_akps,
    jacobian_batch,
    sample_batch,
)

AKP_FLOOR = 1e-3


@dataclass
class AclGradients:
    akps: dict[KernelFamily, np.ndarray]  # family -> (k_f, n_f), mirrors AclLayer.akps
    bias: np.ndarray

    def per_kernel(self, layer: "AclLayer") -> list[np.ndarray]:
        """Gradient vector of every kernel in arrangement order."""
        out = [None] * layer.arrangement.n_kernels
        for fam, idx in layer.index.items():
            for row, k in enumerate(idx):
                out[k] = self.akps[fam][row]
        return out


def output_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


class AclLayer:
    def __init__(
        self,
        arrangement: Arrangement,
        akps: dict[KernelFamily, np.ndarray] | None = None,
        bias: np.ndarray | None = None,
        stride: int = 1,
        padding: int = 0,
        dilation: int = 1,
        seed: int | np.random.Generator = 0,
    ):
        if stride < 1 or padding < 0 or dilation < 1:
            raise ValueError(
                f"need stride >= 1, padding >= 0, dilation >= 1; got {stride}, {padding}, {dilation}"
            )
        self.arrangement = arrangement
        self.stride, self.padding, self.dilation = stride, padding, dilation
        families = arrangement.flatten()
        self.index = {}
        for k, fam in enumerate(families):
            self.index.setdefault(fam, []).append(k)
        self.index = {fam: np.array(ix) for fam, ix in self.index.items()}

        size = arrangement.kernel_size
        if akps is None:
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
            fan_in = arrangement.in_channels * size[0] * size[1]
            akps = {}
            # draw in block order so the stream does not depend on dict ordering
            for fam, n in arrangement.blocks:
                draw = init_akps(fam, size, rng, n, fan_in)
                akps[fam] = draw if fam not in akps else np.concatenate([akps[fam], draw])
        self.akps = {}
        for fam, idx in self.index.items():
            arr = np.array(akps[fam], dtype=np.float64)
            want = (len(idx), fam.akp_count(size))
            if arr.shape != want:
                raise ValueError(f"{fam.value} AKPs have shape {arr.shape}, expected {want}")
            self.akps[fam] = arr
        if set(akps) - set(self.index):
            raise ValueError("AKPs given for families absent from the arrangement")
        co = arrangement.out_channels
        self.bias = np.zeros(co) if bias is None else np.array(bias, dtype=np.float64).reshape(co)
        self._version = 0
        self._bank = None
        self._bank_version = -1

    @classmethod
    def from_specs(cls, arrangement: Arrangement, specs: list[KernelSpec], bias=None, **hyper):
        families = arrangement.flatten()
        if len(specs) != len(families):
            raise ValueError(f"need {len(families)} specs, got {len(specs)}")
        groups = {}
        for k, (fam, spec) in enumerate(zip(families, specs)):
            if spec.family is not fam:
                raise ValueError(
                    f"kernel {k} is {spec.family.value} but the arrangement says {fam.value}"
                )
            if spec.size != arrangement.kernel_size:
                raise ValueError(f"kernel {k} has size {spec.size}, expected {arrangement.kernel_size}")
            groups.setdefault(fam, []).append(spec.akps)
        akps = {fam: np.array(v).reshape(len(v), -1) for fam, v in groups.items()}
        return cls(arrangement, akps, bias, **hyper)

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.arrangement.kernel_size

    @property
    def specs(self) -> list[KernelSpec]:
        out = [None] * self.arrangement.n_kernels
        for fam, idx in self.index.items():
            for row, k in enumerate(idx):
                out[k] = KernelSpec(fam, self.akps[fam][row], self.kernel_size)
        return out

    def n_parameters(self) -> int:
        """Learnable scalars: AKPs plus biases."""
        return sum(a.size for a in self.akps.values()) + self.bias.size

    def touch(self):
        """Mark the AKPs as modified in place."""
        self._version += 1

    def materialize(self) -> np.ndarray:
        if self._bank_version != self._version:
            a = self.arrangement
            h, w = a.kernel_size
            flat = np.empty((a.n_kernels, h, w))
            for fam, idx in self.index.items():
                flat[idx] = sample_batch(fam, self.akps[fam], (h, w))
            self._bank = flat.reshape(a.out_channels, a.in_channels, h, w)
            self._bank_version = self._version
        return self._bank

    def _windows(self, x: np.ndarray) -> np.ndarray:
        h, w = self.kernel_size
        d, s, p = self.dilation, self.stride, self.padding
        if x.ndim != 4 or x.shape[1] != self.arrangement.in_channels:
            raise ValueError(
                f"expected input (B, {self.arrangement.in_channels}, H, W), got {x.shape}"
            )
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        eh, ew = d * (h - 1) + 1, d * (w - 1) + 1
        if x.shape[2] < eh or x.shape[3] < ew:
            raise ValueError(f"input {x.shape[2:]} too small for kernel extent ({eh}, {ew})")
        win = sliding_window_view(x, (eh, ew), axis=(2, 3))
        return win[:, :, ::s, ::s, ::d, ::d]  # (B, Ci, H', W', h, w)

    def forward(self, x: np.ndarray) -> np.ndarray:
        win = self._windows(np.asarray(x, dtype=np.float64))
        out = np.tensordot(win, self.materialize(), axes=([1, 4, 5], [1, 2, 3]))
        out += self.bias
        return out.transpose(0, 3, 1, 2)

    def weight_grad(self, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        """dL/d(weight bank) given dL/d(output); shape (Co, Ci, h, w)."""
        win = self._windows(np.asarray(x, dtype=np.float64))
        self._check_grad_shape(win, grad_out)
        return np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))

    def input_grad(self, input_shape: tuple, grad_out: np.ndarray) -> np.ndarray:
        b, ci, hh, ww = input_shape
        h, w = self.kernel_size
        d, s, p = self.dilation, self.stride, self.padding
        ho, wo = grad_out.shape[2:]
        bank = self.materialize()
        dxp = np.zeros((b, ci, hh + 2 * p, ww + 2 * p))
        for i in range(h):
            for j in range(w):
                contrib = np.tensordot(grad_out, bank[:, :, i, j], axes=([1], [0]))
                dxp[:, :, i * d : i * d + s * (ho - 1) + 1 : s, j * d : j * d + s * (wo - 1) + 1 : s] += (
                    contrib.transpose(0, 3, 1, 2)
                )
        return dxp[:, :, p : p + hh, p : p + ww]

    def _check_grad_shape(self, win, grad_out):
        want = (win.shape[0], self.arrangement.out_channels, win.shape[2], win.shape[3])
        if grad_out.shape != want:
            raise ValueError(f"grad_output has shape {grad_out.shape}, expected {want}")

    def akp_grads(self, dW: np.ndarray) -> dict[KernelFamily, np.ndarray]:
        """Contract a weight-bank gradient with each kernel's AKP Jacobian."""
        h, w = self.kernel_size
        flat = dW.reshape(-1, h, w)
        out = {}
        for fam, idx in self.index.items():
            g = flat[idx]
            if fam is KernelFamily.PLAIN:
                out[fam] = g.reshape(len(idx), h * w).copy()
            elif fam is KernelFamily.MEAN:
                out[fam] = np.zeros((len(idx), 0))
            else:
                jac = jacobian_batch(fam, self.akps[fam], (h, w))
                out[fam] = np.einsum("kij,klij->kl", g, jac)
        return out

    def backward(self, x: np.ndarray, grad_out: np.ndarray) -> tuple[AclGradients, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        grad_out = np.asarray(grad_out, dtype=np.float64)
        dW = self.weight_grad(x, grad_out)
        grads = AclGradients(self.akp_grads(dW), grad_out.sum(axis=(0, 2, 3)))
        return grads, self.input_grad(x.shape, grad_out)

    def apply_update(self, grads: AclGradients, lr: float) -> None:
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        for fam, a in self.akps.items():
            g = grads.akps[fam]
            if g.shape != a.shape:
                raise ValueError(f"{fam.value} gradient shape {g.shape} != {a.shape}")
            a -= lr * g
            for col in POSITIVE_AKPS.get(fam, ()):
                np.maximum(a[:, col], AKP_FLOOR, out=a[:, col])
        self.bias -= lr * grads.bias
        self.touch()


def materialize(layer: AclLayer) -> np.ndarray:
    return layer.materialize()


def forward(layer: AclLayer, x: np.ndarray) -> np.ndarray:
    return layer.forward(x)


def backward(layer: AclLayer, x: np.ndarray, grad_output: np.ndarray):
    return layer.backward(x, grad_output)


def apply_update(layer: AclLayer, grads: AclGradients, lr: float) -> None:
    layer.apply_update(grads, lr)
