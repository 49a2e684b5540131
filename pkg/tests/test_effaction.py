import itertools
import math

import numpy as np
import pytest

from fermidet.covariance import DomainError, covariance_matrix, metal1d
from fermidet.effaction import (
    Interaction,
    antisymmetrize,
    decay_bound_matrix,
    effective_action_exact,
    effective_action_mv,
    effective_action_series,
    gram_determinant_bound,
    in_domain_lambdas,
    is_antisymmetric,
    kernel_abs,
    kernel_norm,
    taylor_remainder_check,
    partition_polynomial,
    quartic_vertex,
    semigroup_defect,
)
from fermidet.grassmann import DimensionError, Multivector
from fermidet.scales import STRICT_BUMP, scale_split


def two_site_covariance(beta=2.0):
    m = metal1d(beta=beta)
    t = np.array([0.3, 1.1])
    x = np.array([[0], [3]])
    return covariance_matrix(t, x, t, x, m)


def slow_kernel_abs(v):
    """Double-loop evaluation of the pinned-slot norm."""
    k, n = v.ndim, v.shape[0]
    best = 0.0
    for i in range(k):
        for xi in range(n):
            total = 0.0
            for idx in itertools.product(range(n), repeat=k):
                if idx[i] == xi:
                    total += abs(v[idx])
            best = max(best, total)
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(21)


# -- kernels and norms


def test_antisymmetrization(rng):
    v = rng.normal(size=(3, 3, 3, 3))
    a = antisymmetrize(v, 2)
    assert is_antisymmetric(a, 2)
    assert np.allclose(a, -np.transpose(a, (1, 0, 2, 3)))
    assert np.allclose(a, -np.transpose(a, (0, 1, 3, 2)))
    assert not is_antisymmetric(v, 2)


def test_interaction_validation():
    with pytest.raises(ValueError):
        Interaction(2, {(0, 0): np.array(1.0)})
    with pytest.raises(DimensionError):
        Interaction(5, {})
    with pytest.raises(ValueError):
        Interaction(2, {(1, 1): np.ones((3, 3))})


def test_kernel_multivector_roundtrip(rng):
    V = Interaction(3, {(1, 1): rng.normal(size=(3, 3)), (2, 2): rng.normal(size=(3,) * 4), (2, 0): rng.normal(size=(3, 3))})
    back = Interaction.from_multivector(V.to_multivector(), 3)
    for key, v in V.kernels.items():
        assert np.allclose(back.kernels[key], v, atol=1e-14)


def test_quartic_vertex_norm():
    U, h = 0.8, 1.5
    V = quartic_vertex(2, U)
    # four nonzero entries of modulus U/4; pinning one slot leaves two of them
    assert kernel_norm(V, h) == pytest.approx(2 * (U / 4) * h**4)
    assert V.to_multivector().coeffs == {0b1111: pytest.approx(-U)}
    assert kernel_norm(Interaction.zero(2), 1.0) == 0.0
    with pytest.raises(ValueError):
        kernel_norm(V, 0.0)


def test_kernel_abs_matches_slow_oracle(rng):
    for shape in [(3, 3), (2, 2, 2, 2), (3, 3, 3)]:
        v = rng.normal(size=shape) * (rng.random(shape) < 0.4)
        assert kernel_abs(v) == pytest.approx(slow_kernel_abs(v))


# -- effective action


def test_zero_coupling_gives_zero():
    W, const = effective_action_exact(quartic_vertex(2, 1.0), two_site_covariance(), 0.0)
    assert const == 0 and all(np.all(v == 0) for v in W.kernels.values())


def test_first_order_matches_wick_sums():
    """Order-one kernels of the quartic vertex, assembled from explicit contractions."""
    C = two_site_covariance()
    U = 1.0
    series = effective_action_series(quartic_vertex(2, U), C, 1)
    W1 = Interaction.from_multivector(series[1], 2).kernels
    # V = U pb0 pb1 p1 p0, shift every field and keep terms with one internal pair
    # int pb'_a p'_b = C[a, b]; expanding by hand gives the (1,1) kernel below
    # and the full quartic term unchanged
    expected_11 = np.zeros((2, 2), dtype=complex)
    # pb0 pb1 p1 p0 with (pb0, p0) internal: sign from moving pb0 next to p0
    # pb0 pb1 p1 p0 -> -pb1 pb0 p1 p0 -> pb1 pb0 p0 p1 ... worked out as
    # contraction(pb0,p0) -> +C00 pb1 p1, (pb0,p1) -> -C01 pb1 p0,
    # (pb1,p1) -> +C11 pb0 p0, (pb1,p0) -> -C10 pb0 p1
    expected_11[1, 1] += U * C[0, 0]
    expected_11[1, 0] -= U * C[0, 1]
    expected_11[0, 0] += U * C[1, 1]
    expected_11[0, 1] -= U * C[1, 0]
    assert np.allclose(W1[(1, 1)], expected_11, atol=1e-14)
    assert np.allclose(W1[(2, 2)], quartic_vertex(2, U).kernels[(2, 2)], atol=1e-14)
    # the field-independent part is the full contraction det C
    assert series[1].scalar_part == pytest.approx(U * np.linalg.det(C))


def test_quadratic_interaction_closed_form(rng):
    n = 2
    C = two_site_covariance()
    A = 0.3 * (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    V = Interaction(n, {(1, 1): A})
    W, const = effective_action_exact(V, C)
    # Gaussian convolution of a Gaussian: log det(1 + A^T C^T ...) in matrix form
    M = np.eye(n) + C.T @ A
    assert const == pytest.approx(np.log(np.linalg.det(M)))
    # the quadratic kernel is the resummed vertex A (1 + C^T A)^-1
    assert np.allclose(W.kernels[(1, 1)], A @ np.linalg.inv(M), atol=1e-12)
    assert all(np.abs(v).max() < 1e-15 for k, v in W.kernels.items() if k != (1, 1))


def test_kernels_antisymmetric(rng):
    C = two_site_covariance()
    V = Interaction(2, {(2, 2): rng.normal(size=(2,) * 4), (1, 1): rng.normal(size=(2, 2))})
    W, _ = effective_action_exact(V, C, 0.2)
    for (mb, m), v in W.kernels.items():
        assert is_antisymmetric(v, mb, tol=1e-12)


def test_series_matches_cauchy_integral():
    C = two_site_covariance()
    V = quartic_vertex(2, 1.0)
    series = effective_action_series(V, C, 4)
    zs = 0.5 * np.exp(2j * np.pi * np.arange(64) / 64)
    Ws = [effective_action_mv(V.scale(z).to_multivector(), C, 2) for z in zs]
    for p in range(5):
        coeffs = {}
        for z, W in zip(zs, Ws):
            for k, c in W.coeffs.items():
                coeffs[k] = coeffs.get(k, 0) + c / z**p / len(zs)
        keys = set(coeffs) | set(series[p].coeffs)
        assert max(abs(coeffs.get(k, 0) - series[p].coeffs.get(k, 0)) for k in keys) < 1e-12


def test_partition_function_polynomial_degree():
    C = two_site_covariance()
    Z = partition_polynomial(quartic_vertex(2, 1.0), C)
    # the quartic vertex is nilpotent of order 2 in the doubled algebra of 2 sites
    assert len(Z) - 1 <= 4


def test_odd_interactions_refused():
    V = Interaction(2, {(1, 0): np.array([1.0, 0.0])})
    with pytest.raises(DomainError):
        effective_action_exact(V, two_site_covariance())


def test_generator_budget():
    V = quartic_vertex(4, 1.0, sites=(0, 3))
    W, _ = effective_action_exact(V, 0.1 * np.eye(4), 0.5)
    assert W.n == 4
    with pytest.raises(DimensionError):
        Interaction(2, {(3, 1): np.zeros((2,) * 4)})
    with pytest.raises(DimensionError):
        Interaction(5, {(1, 1): np.eye(5)})


# -- convergence bound


def test_decay_and_gram_constants():
    C = np.array([[1.0, -2.0], [0.5, 0.25]])
    assert decay_bound_matrix(C) == 3.0
    assert gram_determinant_bound(0.5 * np.ones((2, 2))) == pytest.approx(math.sqrt(0.5))
    assert gram_determinant_bound(C) is None


def test_remainder_bound_holds_on_grid():
    C = two_site_covariance()
    alpha = decay_bound_matrix(C)
    V = quartic_vertex(2, 1.0)
    lams = in_domain_lambdas(V, 1.0, alpha, 2.0)
    rep = taylor_remainder_check(V, C, 1.0, [1, 2, 3], lams, alpha=alpha, delta=2.0)
    assert rep["pass"] and rep["in_domain"] == 15
    rems = {(p["lambda"], p["P"]): p for p in rep["points"]}
    for lam in lams:
        r1, r2 = rems[(lam, 1)], rems[(lam, 2)]
        assert r2["remainder"] <= r1["remainder"]
        # geometric decay diagnostic
        assert r2["remainder"] / r1["remainder"] <= r1["contraction"] + 1e-9


def test_out_of_domain_points_reported_not_failed():
    C = two_site_covariance()
    rep = taylor_remainder_check(quartic_vertex(2, 1.0), C, 1.0, [1], [50.0], delta=2.0)
    assert rep["pass"] and rep["in_domain"] == 0
    assert rep["points"][0]["in_domain"] is False


def test_exhaustion_gives_exact_zero():
    rep = taylor_remainder_check(quartic_vertex(2, 0.5), 0.5 * np.ones((2, 2)), 1.0, [1, 2], [2.0**-8])
    assert all(p["in_domain"] for p in rep["points"])
    assert all(p["remainder"] == 0.0 for p in rep["points"])


def test_semigroup_property():
    m = metal1d(beta=4.0)
    split = scale_split(m, STRICT_BUMP, 8.0)
    t = np.array([0.3, 1.1])
    tau = t[:, None] - t[None, :]
    site = np.array([[0, 5], [3, 0]])
    low = np.take_along_axis(split.ir(tau), site[..., None], -1)[..., 0]
    high = np.take_along_axis(split.uv(tau), site[..., None], -1)[..., 0]
    V = Interaction(2, {**quartic_vertex(2, 0.7).kernels, (1, 1): np.array([[0.2, 0.1j], [-0.1j, 0.3]])})
    assert semigroup_defect(V, low, high) <= 1e-10


def test_staged_convolution_with_random_split(rng):
    C = two_site_covariance()
    A = 0.1 * rng.normal(size=(2, 2))
    V = quartic_vertex(2, 0.4)
    assert semigroup_defect(V, C - A, A) <= 1e-10
