"""Finite-difference verification of ACL AKP gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acl import AclLayer
from .arrangement import Arrangement
from .kernels import TGD1ST_DELTA, KernelFamily, center_index, grid, init_akps

FD_STEP = 1e-6
SMOOTH_MARGIN = 1e-3
DEFAULT_PATTERN = "(2x4)G1Lg1Lt1Tf1Ts1M1P2"


def is_smooth(family: KernelFamily, akps: np.ndarray, size, margin: float = SMOOTH_MARGIN) -> bool:
    """True when no sign, indicator or |.| factor is within ``margin`` of a switch."""
    if family not in (KernelFamily.TGD1ST, KernelFamily.TGD2ND):
        return True
    theta = akps[0]
    gx, gy = grid(size)
    xr = gx[:, None] * np.cos(theta) + gy[None, :] * np.sin(theta)
    mask = np.ones(xr.shape, dtype=bool)
    c = center_index(size)
    if c is not None:
        mask[c] = False  # the origin has xr = 0 for every theta
    xr = np.abs(xr[mask])
    if family is KernelFamily.TGD1ST:
        return abs(np.cos(theta)) > margin and bool(np.all(np.abs(xr - TGD1ST_DELTA) > margin))
    return bool(np.all(xr > margin))


def smooth_akps(family, size, rng, count, fan_in=None) -> np.ndarray:
    out = []
    while len(out) < count:
        a = init_akps(family, size, rng, 1, fan_in)[0]
        if is_smooth(family, a, size):
            out.append(a)
    return np.array(out).reshape(count, -1)


def relative_error(analytic, numeric, floor: float = 1e-6):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


@dataclass
class FamilyCheck:
    family: KernelFamily
    n_akps: int
    max_rel_error: float
    passed: bool


def random_smooth_layer(arrangement: Arrangement, rng: np.random.Generator, **hyper) -> AclLayer:
    layer = AclLayer(arrangement, seed=rng, **hyper)
    fan_in = arrangement.in_channels * arrangement.kernel_size[0] * arrangement.kernel_size[1]
    for fam, a in layer.akps.items():
        a[:] = smooth_akps(fam, arrangement.kernel_size, rng, len(a), fan_in)
    layer.bias[:] = rng.normal(size=layer.bias.shape)
    layer.touch()
    return layer


def layer_gradient_errors(
    layer: AclLayer, rng: np.random.Generator, fault: KernelFamily | None = None
) -> dict[KernelFamily, np.ndarray]:
    """Relative errors of every AKP gradient of ``layer`` against central differences.

    The loss is a fixed random weighting of the layer output. ``fault`` flips
    the sign of one family's analytic gradients to exercise the harness.
    """
    h, w = layer.kernel_size
    ci = layer.arrangement.in_channels
    size = (h + 3) * layer.dilation
    x = rng.normal(size=(2, ci, size, size))
    out = layer.forward(x)
    weights = rng.normal(size=out.shape)
    grads, _ = layer.backward(x, weights)

    def loss():
        layer.touch()
        return float(np.sum(layer.forward(x) * weights))

    errors = {}
    for fam, a in layer.akps.items():
        analytic = grads.akps[fam] * (-1 if fam is fault else 1)
        numeric = np.zeros_like(a)
        for idx in np.ndindex(*a.shape):
            orig = a[idx]
            a[idx] = orig + FD_STEP
            up = loss()
            a[idx] = orig - FD_STEP
            down = loss()
            a[idx] = orig
            numeric[idx] = (up - down) / (2 * FD_STEP)
        layer.touch()
        errors[fam] = relative_error(analytic, numeric).reshape(-1)
    return errors


def run_gradcheck(
    arrangement: Arrangement,
    seed: int = 0,
    points: int = 3,
    tolerance: float = 1e-4,
    fault: KernelFamily | None = None,
) -> list[FamilyCheck]:
    """Check every family of ``arrangement`` at ``points`` random smooth AKP draws."""
    rng = np.random.default_rng(seed)
    worst: dict[KernelFamily, float] = {}
    for _ in range(points):
        layer = random_smooth_layer(arrangement, rng)
        for fam, err in layer_gradient_errors(layer, rng, fault).items():
            worst[fam] = max(worst.get(fam, 0.0), float(err.max()) if err.size else 0.0)
    order = []
    for fam, _ in arrangement.blocks:
        if fam not in order:
            order.append(fam)
    return [
        FamilyCheck(fam, fam.akp_count(arrangement.kernel_size), worst[fam], worst[fam] < tolerance)
        for fam in order
    ]
