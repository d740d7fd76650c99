"""Fit analytic kernels to given weight matrices.

Each target is fitted independently by multi-start descent on the
squared Frobenius error, using the exact AKP Jacobian. All restarts for a
target advance together as one batch; they never interact, so the best
result over the first ``r`` restarts does not depend on how many more follow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import (
    POSITIVE_AKPS,
    KernelFamily,
    KernelSpec,
    init_akps,
    jacobian_batch,
    sample_batch,
)

ARMIJO_C = 1e-4
MAX_HALVINGS = 60
STALL_RTOL = 1e-9

_THETA_INDEX = {KernelFamily.GABOR: 1, KernelFamily.TGD1ST: 0, KernelFamily.TGD2ND: 0}


class FitError(ValueError):
    pass


@dataclass
class FitProblem:
    targets: list
    family: KernelFamily
    restarts: int = 16
    max_iters: int = 500
    tol: float = 1e-8
    seed: int = 0
    gamma: float = 1.0  # Gabor aspect ratio, held fixed
    method: str = "gn"

    def __post_init__(self):
        if self.restarts < 1:
            raise FitError(f"restarts must be >= 1, got {self.restarts}")
        if self.tol <= 0:
            raise FitError(f"tol must be > 0, got {self.tol}")
        if self.family in (KernelFamily.PLAIN, KernelFamily.MEAN):
            raise FitError(f"cannot fit {self.family.value} kernels: "
                           + ("the fit is trivially exact" if self.family is KernelFamily.PLAIN
                              else "they have no AKPs"))
        if len(self.targets) == 0:
            raise FitError("no targets to fit")


@dataclass
class FitResult:
    specs: list[KernelSpec]
    rmse: list[float]
    akp_total: int
    param_total: int
    restart_rmse: list[np.ndarray] = field(default_factory=list)


def _feasible(family: KernelFamily, x: np.ndarray) -> np.ndarray:
    ok = np.all(np.isfinite(x), axis=1)
    for i in POSITIVE_AKPS.get(family, ()):
        ok &= x[:, i] > 0
    if family is KernelFamily.GABOR:
        ok &= x[:, 0] != 0
    return ok


def _objective(family, x, target, gamma):
    """Squared error per row of ``x``; infeasible rows get +inf."""
    f = np.full(len(x), np.inf)
    ok = _feasible(family, x)
    if np.any(ok):
        res = sample_batch(family, x[ok], target.shape, gamma) - target
        f[ok] = np.einsum("rij,rij->r", res, res)
    return f


def initial_points(family: KernelFamily, size, restarts: int, rng: np.random.Generator) -> np.ndarray:
    """Restart ``r`` draws from the default ranges, orientation stratified by pi/8."""
    pts = np.concatenate([init_akps(family, size, rng, 1) for _ in range(restarts)])
    if family in _THETA_INDEX:
        pts[:, _THETA_INDEX[family]] = (np.arange(restarts) % 8) * np.pi / 8
    return pts


def descend(family, x0, target, max_iters=500, tol=1e-8, gamma=1.0, method="gn"):
    """Minimise the squared error from each row of ``x0``.

    ``method="gd"`` steps along the negative gradient; ``"gn"`` uses the
    Gauss-Newton direction, falling back to the gradient when that is not a
    descent direction. Both use halving Armijo backtracking.
    """
    if method not in ("gd", "gn"):
        raise FitError(f"unknown method {method!r}")
    x = np.array(x0, dtype=np.float64)
    size = target.shape
    step = np.ones(len(x))
    active = np.ones(len(x), dtype=bool)
    f = _objective(family, x, target, gamma)
    for _ in range(max_iters):
        if not active.any():
            break
        ia = np.flatnonzero(active)
        xa = x[ia]
        res = sample_batch(family, xa, size, gamma) - target
        jac = jacobian_batch(family, xa, size, gamma)
        g = 2 * np.einsum("rij,rnij->rn", res, jac)
        done = np.sqrt(np.einsum("rn,rn->r", g, g)) < tol
        active[ia[done]] = False
        ia, xa, g, jac = ia[~done], xa[~done], g[~done], jac[~done]
        if method == "gn":
            d = _gauss_newton(jac, g)
            t = np.ones(len(ia))
        else:
            d = -g
            t = step[ia].copy()
        gg = -np.einsum("rn,rn->r", g, d)  # directional decrease, > 0
        pending = np.ones(len(ia), dtype=bool)
        for _ in range(MAX_HALVINGS):
            if not pending.any():
                break
            cand = xa[pending] + t[pending, None] * d[pending]
            fc = _objective(family, cand, target, gamma)
            ok = fc <= f[ia[pending]] - ARMIJO_C * t[pending] * gg[pending]
            rows = np.flatnonzero(pending)
            accepted = rows[ok]
            stalled = fc[ok] >= f[ia[accepted]] * (1 - STALL_RTOL)
            x[ia[accepted]] = cand[ok]
            f[ia[accepted]] = fc[ok]
            active[ia[accepted[stalled]]] = False
            pending[accepted] = False
            t[rows[~ok]] *= 0.5
        # a row whose step shrank to nothing has stalled
        active[ia[pending]] = False
        step[ia] = np.minimum(t * 2.0, 1e6)
    return x, f


def _gauss_newton(jac, g):
    n = jac.shape[1]
    jtj = 2 * np.einsum("rkij,rlij->rkl", jac, jac)
    scale = np.einsum("rkk->r", jtj) / n
    damp = (1e-10 * scale + 1e-300)[:, None, None] * np.eye(n)
    try:
        d = -np.linalg.solve(jtj + damp, g[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return -g
    bad = ~np.all(np.isfinite(d), axis=1) | (np.einsum("rn,rn->r", g, d) >= 0)
    d[bad] = -g[bad]
    return d


def fit(problem: FitProblem) -> FitResult:
    fam = problem.family
    rng = np.random.default_rng(problem.seed)
    specs, rmse, all_rmse = [], [], []
    param_total = akp_total = 0
    for target in problem.targets:
        target = np.array(target, dtype=np.float64)  # never touch the caller's array
        if target.ndim != 2:
            raise FitError(f"targets must be 2-D matrices, got shape {target.shape}")
        h, w = target.shape
        x0 = initial_points(fam, (h, w), problem.restarts, rng)
        x, f = descend(
            fam, x0, target, problem.max_iters, problem.tol, problem.gamma, problem.method
        )
        r = np.sqrt(f / (h * w))
        best = int(np.argmin(r))
        specs.append(KernelSpec(fam, x[best], (h, w), problem.gamma))
        rmse.append(float(r[best]))
        all_rmse.append(r)
        param_total += h * w
        akp_total += fam.akp_count((h, w))
    return FitResult(specs, rmse, akp_total, param_total, all_rmse)


def fit_report(result: FitResult) -> dict:
    if not result.specs:
        raise FitError("empty fit result")
    return {
        "family": result.specs[0].family.value,
        "targets": [
            {
                "size": list(s.size),
                "rmse": r,
                "akps": dict(zip(s.family.akp_names, map(float, s.akps))),
            }
            for s, r in zip(result.specs, result.rmse)
        ],
        "akp_total": result.akp_total,
        "param_total": result.param_total,
        "compression_ratio": 1.0 - result.akp_total / result.param_total,
    }
