"""Analytic convolutional layers: kernel banks generated from a few learnable parameters."""

from .acl import AclLayer
from .arrangement import Arrangement, RatioArrangement, compact_factor, parse_pattern, serialize
from .kernels import KernelFamily, KernelSpec, akp_jacobian, sample

__all__ = [
    "AclLayer",
    "Arrangement",
    "KernelFamily",
    "KernelSpec",
    "RatioArrangement",
    "akp_jacobian",
    "compact_factor",
    "parse_pattern",
    "sample",
    "serialize",
]
