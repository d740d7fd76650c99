import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from analytic_conv.gradcheck import is_smooth
from analytic_conv.kernels import (
    AKPDomainError,
    KernelFamily,
    KernelSpec,
    akp_jacobian,
    default_init,
    grid,
    init_akps,
    sample,
)

F = KernelFamily
ANALYTIC = [F.GABOR, F.LOG, F.LOT, F.TGD1ST, F.TGD2ND]
sizes = st.tuples(st.integers(1, 9), st.integers(1, 9))
odd_sizes = st.tuples(st.sampled_from([1, 3, 5, 7, 9]), st.sampled_from([1, 3, 5, 7, 9]))


def spec(fam, *akps, size=(7, 7)):
    return KernelSpec(fam, np.array(akps, dtype=float), size)


def test_akp_counts():
    assert [f.akp_count((5, 4)) for f in F] == [0, 4, 1, 3, 2, 1, 20]
    assert F.from_code("Tf") is F.TGD1ST
    with pytest.raises(ValueError):
        F.from_code("X")


@given(sizes)
def test_grid_is_antisymmetric(size):
    gx, gy = grid(size)
    npt.assert_array_equal(gx, -gx[::-1])
    npt.assert_array_equal(gy, -gy[::-1])
    assert gx[0] == 1 - (size[0] + 1) / 2


def test_mean_kernel():
    npt.assert_allclose(sample(KernelSpec(F.MEAN, np.zeros(0), (7, 7))), np.full((7, 7), 1 / 7), rtol=0, atol=1e-15)


def test_gabor_center_is_one():
    assert sample(spec(F.GABOR, 2, 0, 0, 1))[3, 3] == 1.0


def test_log_center():
    npt.assert_allclose(sample(spec(F.LOG, 1.0))[3, 3], -1 / math.pi, rtol=1e-14)


def test_tgd1st_indicator_zeroes_middle_row():
    m = sample(spec(F.TGD1ST, 0, 1, 1))
    # with x the row offset, x' = x at theta = 0, so x' = 0 is the middle row
    npt.assert_array_equal(m[3], 0.0)
    assert np.all(m[np.arange(7) != 3] > 0)


def test_tgd2nd_sums_to_zero():
    assert abs(sample(spec(F.TGD2ND, 0.3, 2)).sum()) < 1e-12


def test_plain_is_row_major():
    npt.assert_array_equal(sample(KernelSpec(F.PLAIN, np.arange(6.0), (2, 3))), np.arange(6.0).reshape(2, 3))


@pytest.mark.parametrize(
    "fam,akps",
    [
        (F.GABOR, (3.0, 0.7, 0.2, 1.5)),
        (F.LOG, (1.3,)),
        (F.LOT, (1.7,)),
        (F.TGD1ST, (0.4, 1.2, 2.1)),
        (F.TGD2ND, (1.1, 1.6)),
        (F.MEAN, ()),
    ],
)
@pytest.mark.parametrize("size", [(7, 7), (5, 3), (4, 6), (1, 1)])
def test_sample_matches_pointwise_oracle(fam, akps, size):
    npt.assert_allclose(sample(spec(fam, *akps, size=size)), oracles.kernel(fam.code, akps, *size), rtol=1e-13, atol=1e-15)


@given(st.sampled_from(ANALYTIC), sizes, st.integers(0, 2**32 - 1))
def test_sample_matches_oracle_at_random_points(fam, size, seed):
    a = init_akps(fam, size, np.random.default_rng(seed), 1)[0]
    npt.assert_allclose(sample(KernelSpec(fam, a, size)), oracles.kernel(fam.code, a, *size), rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize(
    "fam,akps,bad",
    [
        (F.LOG, (0.0,), "sigma"),
        (F.LOT, (-1.0,), "sigma"),
        (F.GABOR, (0.0, 0, 0, 1), "lambda"),
        (F.GABOR, (2.0, 0, 0, -1), "sigma"),
        (F.TGD1ST, (0.0, 1, 0), "gamma2"),
        (F.TGD2ND, (0.0, 0), "gamma"),
    ],
)
def test_domain_errors_name_the_akp(fam, akps, bad):
    with pytest.raises(AKPDomainError, match=bad):
        spec(fam, *akps)


def test_wrong_akp_length_rejected():
    with pytest.raises(ValueError):
        spec(F.GABOR, 1.0, 2.0)


@given(odd_sizes, st.sampled_from([F.TGD2ND, F.LOT]), st.integers(0, 2**32 - 1))
def test_zero_sum_families(size, fam, seed):
    a = init_akps(fam, size, np.random.default_rng(seed), 1)[0]
    assert abs(sample(KernelSpec(fam, a, size)).sum()) < 1e-12


@given(st.integers(1, 9), st.sampled_from([F.LOG, F.LOT]), st.floats(0.2, 5.0))
def test_isotropic_families_rotation_invariant(n, fam, sigma):
    m = sample(spec(fam, sigma, size=(n, n)))
    npt.assert_allclose(np.rot90(m), m, rtol=0, atol=1e-14)


@given(st.sampled_from([F.GABOR, F.TGD1ST, F.TGD2ND]), st.integers(0, 2**32 - 1))
def test_theta_is_2pi_periodic(fam, seed):
    a = init_akps(fam, (7, 7), np.random.default_rng(seed), 1)[0]
    i = 1 if fam is F.GABOR else 0
    b = a.copy()
    b[i] += 2 * np.pi
    # the indicator can flip for points within rounding of |x'| = delta
    if fam is F.TGD1ST and not (is_smooth(fam, a, (7, 7)) and is_smooth(fam, b, (7, 7))):
        return
    npt.assert_allclose(sample(KernelSpec(fam, b, (7, 7))), sample(KernelSpec(fam, a, (7, 7))), rtol=0, atol=1e-12)


def test_mean_has_unit_norm():
    for size in [(1, 1), (3, 3), (4, 7)]:
        assert np.isclose(np.linalg.norm(sample(KernelSpec(F.MEAN, np.zeros(0), size))), 1.0, rtol=1e-14)


def test_plain_jacobian_is_one_hot():
    j = akp_jacobian(KernelSpec(F.PLAIN, np.zeros(9), (3, 3)))
    want = np.zeros((3, 3))
    want[1, 1] = 1
    npt.assert_array_equal(j[4], want)  # 1-based index 5 is the centre


def test_mean_jacobian_is_empty():
    assert akp_jacobian(KernelSpec(F.MEAN, np.zeros(0), (5, 5))).shape == (0, 5, 5)


def _fd_jacobian(fam, a, size, step=1e-6):
    return np.stack(
        [
            (oracles.kernel(fam.code, a + step * e, *size) - oracles.kernel(fam.code, a - step * e, *size)) / (2 * step)
            for e in np.eye(len(a))
        ]
    )


def _rel(a, b, floor=1e-4):
    # entries below the floor are compared absolutely; step-1e-6 roundoff is ~1e-10
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def test_gabor_jacobian_fixed_point():
    a = np.array([3.0, 0.7, 0.2, 1.5])
    j = akp_jacobian(KernelSpec(F.GABOR, a, (7, 7)))
    assert _rel(j, _fd_jacobian(F.GABOR, a, (7, 7))).max() < 1e-5


@given(st.sampled_from(ANALYTIC), sizes, st.integers(0, 2**32 - 1))
def test_jacobian_matches_finite_differences(fam, size, seed):
    rng = np.random.default_rng(seed)
    a = init_akps(fam, size, rng, 1)[0]
    while not is_smooth(fam, a, size):
        a = init_akps(fam, size, rng, 1)[0]
    j = akp_jacobian(KernelSpec(fam, a, size))
    assert _rel(j, _fd_jacobian(fam, a, size)).max() < 1e-5


def test_default_init_deterministic_and_in_range():
    npt.assert_array_equal(default_init(F.LOG, (7, 7), 1).akps, default_init(F.LOG, (7, 7), 1).akps)
    for seed in range(50):
        lam, theta, psi, sigma = default_init(F.GABOR, (7, 7), seed).akps
        assert 2 <= lam <= 7 and 0.875 <= sigma <= 3.5
        assert 0 <= theta < np.pi and 0 <= psi < 2 * np.pi
    p = default_init(F.PLAIN, (3, 3), 0).akps
    assert p.shape == (9,) and np.all(np.abs(p) <= 1 / 3)
