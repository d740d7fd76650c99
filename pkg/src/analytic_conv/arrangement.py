"""Kernel arrangement patterns.

A pattern such as ``(3x64)G30Lg15Lt15Tf36P96`` lists, in order, how many
kernels of each family make up a layer's ``Ci * Co`` kernels. The ratio form
``G0.1562Lg0.0781Lt0.0781Tf0.1875P0.5`` gives fractions instead and is bound
to concrete channel counts later with :func:`bind_ratios`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction

from .kernels import KernelFamily

RATIO_TOLERANCE = 0.01

_PREFIX = re.compile(r"\s*\(\s*(\d+)\s*[xX×]\s*(\d+)\s*\)")
_BLOCK = re.compile(r"\s*(Lg|Lt|Tf|Ts|G|M|P)(\d+(?:\.\d*)?|\.\d+)")


class ArrangementError(ValueError):
    pass


@dataclass(frozen=True)
class Arrangement:
    in_channels: int
    out_channels: int
    kernel_size: tuple[int, int]
    blocks: tuple[tuple[KernelFamily, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple((f, int(n)) for f, n in self.blocks))
        object.__setattr__(self, "kernel_size", tuple(int(s) for s in self.kernel_size))
        if self.in_channels < 1 or self.out_channels < 1:
            raise ArrangementError(
                f"channel counts must be positive, got {self.in_channels}x{self.out_channels}"
            )
        if not self.blocks:
            raise ArrangementError("arrangement has no blocks")
        for fam, n in self.blocks:
            if n < 1:
                raise ArrangementError(f"block {fam.code}{n}: count must be positive")
        total = sum(n for _, n in self.blocks)
        if total != self.n_kernels:
            raise ArrangementError(
                f"block counts sum to {total} but {self.in_channels}x{self.out_channels} "
                f"needs {self.n_kernels} (last block {self.blocks[-1][0].code}{self.blocks[-1][1]})"
            )

    @property
    def n_kernels(self) -> int:
        return self.in_channels * self.out_channels

    def flatten(self) -> list[KernelFamily]:
        """Family of every kernel position, in arrangement order."""
        return [fam for fam, n in self.blocks for _ in range(n)]

    def __str__(self):
        return serialize(self)


@dataclass(frozen=True)
class RatioArrangement:
    blocks: tuple[tuple[KernelFamily, float], ...]
    in_channels: int | None = None
    out_channels: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple((f, float(r)) for f, r in self.blocks))
        if not self.blocks:
            raise ArrangementError("arrangement has no blocks")
        for fam, r in self.blocks:
            if not 0 < r <= 1:
                raise ArrangementError(f"block {fam.code}{r}: ratio must lie in (0, 1]")
        total = sum(r for _, r in self.blocks)
        if abs(total - 1) > RATIO_TOLERANCE + 1e-12:
            raise ArrangementError(
                f"ratios sum to {total:.6g}, not within {RATIO_TOLERANCE} of 1 "
                f"(last block {self.blocks[-1][0].code}{self.blocks[-1][1]})"
            )


def parse_pattern(
    text: str, kernel_size: tuple[int, int] = (7, 7)
) -> Arrangement | RatioArrangement:
    """Parse a count-form or ratio-form arrangement pattern.

    Count form needs the ``(CixCo)`` prefix; the kernel size is not part of
    the notation and is supplied separately.
    """
    pos = 0
    ci = co = None
    m = _PREFIX.match(text)
    if m:
        ci, co = int(m.group(1)), int(m.group(2))
        pos = m.end()
    blocks = []
    while pos < len(text.rstrip()):
        m = _BLOCK.match(text, pos)
        if not m:
            raise ArrangementError(f"cannot parse block at {text[pos:].strip()!r}")
        blocks.append((m.group(1), m.group(2)))
        pos = m.end()
    if not blocks:
        raise ArrangementError(f"pattern {text!r} has no blocks")

    is_ratio = ["." in num for _, num in blocks]
    if any(is_ratio) and not all(is_ratio):
        odd = next(f"{c}{n}" for (c, n), r in zip(blocks, is_ratio) if r != is_ratio[0])
        raise ArrangementError(f"block {odd} mixes count and ratio forms")

    families = [KernelFamily.from_code(c) for c, _ in blocks]
    if is_ratio[0]:
        return RatioArrangement(
            tuple(zip(families, (float(n) for _, n in blocks))), ci, co
        )
    if ci is None:
        raise ArrangementError(
            f"count form needs a (CixCo) prefix before block {blocks[0][0]}{blocks[0][1]}"
        )
    return Arrangement(ci, co, kernel_size, tuple(zip(families, (int(n) for _, n in blocks))))


def bind_ratios(
    r: RatioArrangement, in_channels: int, out_channels: int, kernel_size: tuple[int, int]
) -> Arrangement:
    """Turn ratios into counts by largest-remainder apportionment."""
    total = in_channels * out_channels
    # exact arithmetic on the decimal ratios, so near-ties are not decided by rounding
    exact = [Fraction(repr(x)) for _, x in r.blocks]
    ratio_sum = sum(exact)
    quotas = [x / ratio_sum * total for x in exact]
    counts = [math.floor(q) for q in quotas]
    spare = total - sum(counts)
    # larger remainder first, earlier block wins ties
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:spare]:
        counts[i] += 1
    for (fam, x), n in zip(r.blocks, counts):
        if n == 0:
            raise ArrangementError(
                f"block {fam.code}{x} gets no kernels at {in_channels}x{out_channels}"
            )
    return Arrangement(
        in_channels, out_channels, kernel_size, tuple(zip((f for f, _ in r.blocks), counts))
    )


def resolve(
    text: str, in_channels: int, out_channels: int, kernel_size: tuple[int, int]
) -> Arrangement:
    """Parse ``text`` for a layer of known shape, binding ratio forms."""
    a = parse_pattern(text, kernel_size)
    if isinstance(a, RatioArrangement):
        return bind_ratios(a, in_channels, out_channels, kernel_size)
    if (a.in_channels, a.out_channels) != (in_channels, out_channels):
        raise ArrangementError(
            f"pattern is {a.in_channels}x{a.out_channels} but the layer is "
            f"{in_channels}x{out_channels}"
        )
    return a


def compact_factor(a: Arrangement) -> float:
    """Fraction of learnable parameters saved relative to a plain layer."""
    h, w = a.kernel_size
    learnable = sum(fam.akp_count(a.kernel_size) * n for fam, n in a.blocks)
    return 1.0 - learnable / (a.n_kernels * h * w)


def serialize(a: Arrangement) -> str:
    body = "".join(f"{fam.code}{n}" for fam, n in a.blocks)
    return f"({a.in_channels}x{a.out_channels}){body}"


def _decimal(x: float) -> str:
    """Shortest round-tripping decimal, never in exponent form."""
    s = format(Decimal(repr(x)), "f")
    return s if "." in s else s + ".0"


def serialize_ratio(r: RatioArrangement) -> str:
    body = "".join(f"{fam.code}{_decimal(x)}" for fam, x in r.blocks)
    if r.in_channels is not None:
        return f"({r.in_channels}x{r.out_channels}){body}"
    return body
