"""Analytic kernel families.

Every family maps a small vector of analytic kernel parameters (AKPs) to an
``h x w`` weight matrix by sampling a closed-form function on a grid centred
on the kernel. The batched functions here take an AKP matrix of shape
``(k, n)`` and return ``(k, h, w)`` samples or ``(k, n, h, w)`` Jacobians, so
a layer can materialise all kernels of one family in a single call.

Grid convention: entry ``(i, j)`` of a kernel is evaluated at
``x = i - (h - 1) / 2`` (row offset) and ``y = j - (w - 1) / 2`` (column
offset), with 0-based ``i, j``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

TGD1ST_DELTA = 1e-4


class KernelFamily(enum.Enum):
    MEAN = "Mean"
    GABOR = "Gabor"
    LOG = "LoG"
    TGD1ST = "TGD1st"
    TGD2ND = "TGD2nd"
    LOT = "LoT"
    PLAIN = "Plain"

    @property
    def code(self) -> str:
        return _CODES[self]

    @classmethod
    def from_code(cls, code: str) -> "KernelFamily":
        try:
            return _FROM_CODE[code]
        except KeyError:
            raise ValueError(f"unknown kernel code {code!r}") from None

    @property
    def akp_names(self) -> tuple[str, ...]:
        """Names of the AKPs in vector order. Plain kernels have no names."""
        return _AKP_NAMES[self]

    @property
    def is_analytic(self) -> bool:
        return self is not KernelFamily.PLAIN

    def akp_count(self, size: tuple[int, int]) -> int:
        if self is KernelFamily.PLAIN:
            return size[0] * size[1]
        return len(_AKP_NAMES[self])


_CODES = {
    KernelFamily.GABOR: "G",
    KernelFamily.LOG: "Lg",
    KernelFamily.LOT: "Lt",
    KernelFamily.TGD1ST: "Tf",
    KernelFamily.TGD2ND: "Ts",
    KernelFamily.MEAN: "M",
    KernelFamily.PLAIN: "P",
}
_FROM_CODE = {v: k for k, v in _CODES.items()}

_AKP_NAMES = {
    KernelFamily.MEAN: (),
    KernelFamily.GABOR: ("lambda", "theta", "psi", "sigma"),
    KernelFamily.LOG: ("sigma",),
    KernelFamily.TGD1ST: ("theta", "gamma1", "gamma2"),
    KernelFamily.TGD2ND: ("theta", "gamma"),
    KernelFamily.LOT: ("sigma",),
    KernelFamily.PLAIN: (),
}

# AKP indices that must stay strictly positive; the layer clamps these.
POSITIVE_AKPS = {
    KernelFamily.GABOR: (3,),
    KernelFamily.LOG: (0,),
    KernelFamily.TGD1ST: (1, 2),
    KernelFamily.TGD2ND: (1,),
    KernelFamily.LOT: (0,),
}


class AKPDomainError(ValueError):
    """An AKP lies outside the domain of its kernel function."""


class Grid(NamedTuple):
    offsets_x: np.ndarray
    offsets_y: np.ndarray


def grid(size: tuple[int, int]) -> Grid:
    h, w = size
    return Grid(np.arange(h) - (h - 1) / 2.0, np.arange(w) - (w - 1) / 2.0)


def center_index(size: tuple[int, int]) -> tuple[int, int] | None:
    """Index of the grid point at the origin, or None for even sizes."""
    h, w = size
    if h % 2 and w % 2:
        return h // 2, w // 2
    return None


@dataclass(frozen=True)
class KernelSpec:
    family: KernelFamily
    akps: np.ndarray
    size: tuple[int, int]
    gamma: float = field(default=1.0)  # Gabor aspect ratio; never trained

    def __post_init__(self):
        akps = np.asarray(self.akps, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "akps", akps)
        object.__setattr__(self, "size", (int(self.size[0]), int(self.size[1])))
        h, w = self.size
        if h < 1 or w < 1:
            raise ValueError(f"kernel size must be positive, got {self.size}")
        n = self.family.akp_count(self.size)
        if akps.shape[0] != n:
            raise ValueError(
                f"{self.family.value} at {h}x{w} takes {n} AKPs, got {akps.shape[0]}"
            )
        check_domain(self.family, akps[None, :], self.gamma)

    @property
    def akp_count(self) -> int:
        return self.akps.shape[0]


def check_domain(family: KernelFamily, akps: np.ndarray, gamma: float = 1.0) -> None:
    """Raise AKPDomainError naming the first invalid AKP in ``akps`` (k, n)."""
    akps = np.asarray(akps, dtype=np.float64)
    if not np.all(np.isfinite(akps)):
        raise AKPDomainError(f"{family.value} AKPs must be finite")
    names = family.akp_names
    for idx in POSITIVE_AKPS.get(family, ()):
        bad = akps[:, idx] <= 0
        if np.any(bad):
            val = akps[np.argmax(bad), idx]
            raise AKPDomainError(f"{family.value} AKP {names[idx]!r} must be > 0, got {val!r}")
    if family is KernelFamily.GABOR:
        bad = akps[:, 0] == 0
        if np.any(bad):
            raise AKPDomainError("Gabor AKP 'lambda' must be nonzero, got 0.0")
        if gamma <= 0:
            raise AKPDomainError(f"Gabor aspect ratio gamma must be > 0, got {gamma!r}")


def _rotate(x, y, theta):
    c = np.cos(theta)[:, None, None]
    s = np.sin(theta)[:, None, None]
    return x * c + y * s, -x * s + y * c


def _coords(size):
    gx, gy = grid(size)
    return gx[None, :, None], gy[None, None, :]


def _center_subtract(raw: np.ndarray, size) -> np.ndarray:
    c = center_index(size)
    if c is None:
        return raw
    out = raw.copy()
    out[..., c[0], c[1]] -= raw.sum(axis=(-2, -1))
    return out


def sample_batch(
    family: KernelFamily, akps: np.ndarray, size: tuple[int, int], gamma: float = 1.0
) -> np.ndarray:
    """Sample ``k`` kernels of one family; ``akps`` has shape (k, n)."""
    size = (int(size[0]), int(size[1]))
    h, w = size
    akps = np.asarray(akps, dtype=np.float64)
    if akps.ndim == 1:
        akps = akps[None, :]
    k = akps.shape[0]
    if family is KernelFamily.MEAN:
        return np.full((k, h, w), 1.0 / np.sqrt(h * w))
    if family is KernelFamily.PLAIN:
        return akps.reshape(k, h, w).copy()
    check_domain(family, akps, gamma)
    x, y = _coords(size)

    if family is KernelFamily.GABOR:
        lam, theta, psi, sigma = (akps[:, i, None, None] for i in range(4))
        xr, yr = _rotate(x, y, akps[:, 1])
        env = np.exp(-(xr**2 + gamma**2 * yr**2) / (2 * sigma**2))
        return env * np.cos(2 * np.pi * xr / lam + psi)

    if family is KernelFamily.LOG:
        sigma = akps[:, 0, None, None]
        a = (x**2 + y**2) / (2 * sigma**2)
        return -1.0 / (np.pi * sigma**4) * (1 - a) * np.exp(-a)

    if family is KernelFamily.TGD1ST:
        theta = akps[:, 0]
        g1, g2 = akps[:, 1, None, None], akps[:, 2, None, None]
        xr, yr = _rotate(x, y, theta)
        sgn = np.sign(np.cos(theta))[:, None, None]
        return np.exp(-(xr**2) / g1**2 - yr**2 / g2**2) * sgn * (np.abs(xr) > TGD1ST_DELTA)

    if family is KernelFamily.TGD2ND:
        return _center_subtract(_tgd2nd_raw(akps, x, y)[0], size)

    if family is KernelFamily.LOT:
        sigma = akps[:, 0, None, None]
        return _center_subtract(np.exp(-(x**2 + y**2) / sigma**2), size)

    raise ValueError(f"unsupported family {family}")  # pragma: no cover


def _tgd2nd_raw(akps, x, y):
    gamma = akps[:, 1, None, None]
    xr, _ = _rotate(x, y, akps[:, 0])
    r2 = np.broadcast_to(x**2 + y**2, xr.shape)
    ratio = np.divide(np.abs(xr), r2, out=np.zeros_like(xr), where=r2 > 0)
    env = np.exp(-r2 / gamma**2)
    return env * ratio, xr, r2, env


def jacobian_batch(
    family: KernelFamily, akps: np.ndarray, size: tuple[int, int], gamma: float = 1.0
) -> np.ndarray:
    """d(kernel)/d(AKP) for ``k`` kernels; returns shape (k, n, h, w).

    Sign, indicator and absolute-value factors are treated as locally
    constant except that ``|u|`` differentiates to ``sign(u) du``.
    """
    size = (int(size[0]), int(size[1]))
    h, w = size
    akps = np.asarray(akps, dtype=np.float64)
    if akps.ndim == 1:
        akps = akps[None, :]
    k = akps.shape[0]
    if family is KernelFamily.MEAN:
        return np.zeros((k, 0, h, w))
    if family is KernelFamily.PLAIN:
        eye = np.eye(h * w).reshape(h * w, h, w)
        return np.broadcast_to(eye, (k, h * w, h, w)).copy()
    check_domain(family, akps, gamma)
    x, y = _coords(size)

    if family is KernelFamily.GABOR:
        lam, theta, psi, sigma = (akps[:, i, None, None] for i in range(4))
        xr, yr = _rotate(x, y, akps[:, 1])
        q = xr**2 + gamma**2 * yr**2
        env = np.exp(-q / (2 * sigma**2))
        arg = 2 * np.pi * xr / lam + psi
        c, s = np.cos(arg), np.sin(arg)
        d_lam = env * s * 2 * np.pi * xr / lam**2
        d_theta = env * (c * (gamma**2 - 1) * xr * yr / sigma**2 - s * 2 * np.pi * yr / lam)
        d_psi = -env * s
        d_sigma = env * c * q / sigma**3
        return np.stack([d_lam, d_theta, d_psi, d_sigma], axis=1)

    if family is KernelFamily.LOG:
        sigma = akps[:, 0, None, None]
        a = (x**2 + y**2) / (2 * sigma**2)
        d = 2.0 / (np.pi * sigma**5) * np.exp(-a) * (2 - 4 * a + a**2)
        return d[:, None]

    if family is KernelFamily.TGD1ST:
        theta = akps[:, 0]
        g1, g2 = akps[:, 1, None, None], akps[:, 2, None, None]
        xr, yr = _rotate(x, y, theta)
        sgn = np.sign(np.cos(theta))[:, None, None]
        val = np.exp(-(xr**2) / g1**2 - yr**2 / g2**2) * sgn * (np.abs(xr) > TGD1ST_DELTA)
        d_theta = val * (-2 * xr * yr) * (1 / g1**2 - 1 / g2**2)
        d_g1 = val * 2 * xr**2 / g1**3
        d_g2 = val * 2 * yr**2 / g2**3
        return np.stack([d_theta, d_g1, d_g2], axis=1)

    if family is KernelFamily.TGD2ND:
        raw, xr, r2, env = _tgd2nd_raw(akps, x, y)
        gamma_ = akps[:, 1, None, None]
        _, yr = _rotate(x, y, akps[:, 0])
        d_theta = env * np.divide(np.sign(xr) * yr, r2, out=np.zeros_like(xr), where=r2 > 0)
        d_gamma = raw * 2 * r2 / gamma_**3
        return _center_subtract(np.stack([d_theta, d_gamma], axis=1), size)

    if family is KernelFamily.LOT:
        sigma = akps[:, 0, None, None]
        r2 = x**2 + y**2
        d = np.exp(-r2 / sigma**2) * 2 * r2 / sigma**3
        return _center_subtract(d[:, None], size)

    raise ValueError(f"unsupported family {family}")  # pragma: no cover


def sample(spec: KernelSpec) -> np.ndarray:
    """The ``h x w`` weight matrix of one kernel."""
    return sample_batch(spec.family, spec.akps[None, :], spec.size, spec.gamma)[0]


def akp_jacobian(spec: KernelSpec) -> np.ndarray:
    """Jacobian of :func:`sample` w.r.t. the AKPs, shape (n, h, w)."""
    return jacobian_batch(spec.family, spec.akps[None, :], spec.size, spec.gamma)[0]


def init_akps(
    family: KernelFamily,
    size: tuple[int, int],
    rng: np.random.Generator,
    count: int = 1,
    fan_in: int | None = None,
) -> np.ndarray:
    """Draw ``count`` random AKP vectors, shape (count, n).

    Scale-like AKPs are drawn from ``[0.5 s, 2 s]`` with ``s = min(h, w) / 4``,
    wavelengths from ``[2, min(h, w)]``, orientations from ``[0, pi)`` and
    phases from ``[0, 2 pi)``. Plain weights use the fan-in uniform rule.
    """
    h, w = size
    m = min(h, w)
    s = m / 4.0
    if family is KernelFamily.MEAN:
        return np.zeros((count, 0))
    if family is KernelFamily.PLAIN:
        bound = 1.0 / np.sqrt(fan_in if fan_in is not None else h * w)
        return rng.uniform(-bound, bound, size=(count, h * w))

    def scale(n=count):
        return rng.uniform(0.5 * s, 2 * s, size=n)

    def angle(n=count):
        return rng.uniform(0.0, np.pi, size=n)

    if family is KernelFamily.GABOR:
        lam = rng.uniform(2.0, max(2.0, float(m)), size=count)
        theta = angle()
        psi = rng.uniform(0.0, 2 * np.pi, size=count)
        return np.stack([lam, theta, psi, scale()], axis=1)
    if family in (KernelFamily.LOG, KernelFamily.LOT):
        return scale()[:, None]
    if family is KernelFamily.TGD1ST:
        theta = angle()
        return np.stack([theta, scale(), scale()], axis=1)
    if family is KernelFamily.TGD2ND:
        theta = angle()
        return np.stack([theta, scale()], axis=1)
    raise ValueError(f"unsupported family {family}")  # pragma: no cover


def default_init(
    family: KernelFamily,
    size: tuple[int, int],
    rng_seed: int | np.random.Generator = 0,
    fan_in: int | None = None,
) -> KernelSpec:
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return KernelSpec(family, init_akps(family, size, rng, 1, fan_in)[0], size)
