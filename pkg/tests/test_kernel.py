import numpy as np
import pytest
from scipy.stats import multivariate_normal

from kolmogorov.grid import Grid
from kolmogorov.group_structure import GroupElement, group_compose, validate_blocks
from kolmogorov.kernel import (
    GaussianKernel,
    KernelError,
    _gauss_legendre_covariance,
    _posterior,
    ck_residual,
    covariance,
    density,
    gaussian_cauchy_solution,
    kernel_function,
    log_density,
    normalization,
    pde_residual,
    solve_cauchy,
)
from kolmogorov.verify import observed_order


def test_covariance_closed_form(prototype_kernel):
    for t in (0.1, 1.0, 4.0):
        cov = covariance(prototype_kernel, t)
        expected = np.array([[t, t * t / 2.0], [t * t / 2.0, t ** 3 / 3.0]])
        assert np.allclose(cov.C, expected, rtol=1e-10, atol=0.0)
        assert cov.quadrature_gap <= 1e-10
        assert cov.logdet == pytest.approx(np.log(t ** 4 / 12.0), abs=1e-10)


def test_covariance_cached(prototype_kernel):
    assert covariance(prototype_kernel, 0.5) is covariance(prototype_kernel, 0.5)


def test_covariance_rejects_nonpositive_time(prototype_kernel):
    with pytest.raises(KernelError):
        covariance(prototype_kernel, 0.0)


def test_kernel_rejects_degenerate_B():
    B = validate_blocks(np.zeros((1, 1)), (1,))
    GaussianKernel(B)
    with pytest.raises(ValueError):
        GaussianKernel(validate_blocks(np.zeros((2, 2)), (1, 1)))


def test_peak_values(prototype_kernel, heat_kernel, heat1_kernel):
    assert float(density(prototype_kernel, 0.0, [0.0, 0.0], 1.0, [0.0, 0.0])) == pytest.approx(
        np.sqrt(3.0) / np.pi, rel=1e-12
    )
    assert float(density(heat_kernel, 0.0, [0.0, 0.0], 1.0, [0.0, 0.0])) == pytest.approx(1.0 / (2.0 * np.pi))
    assert float(density(heat1_kernel, 0.0, [0.0], 1.0, [0.0])) == pytest.approx(1.0 / np.sqrt(2.0 * np.pi))
    assert prototype_kernel.log_peak(1.0) == pytest.approx(np.log(np.sqrt(3.0) / np.pi), abs=1e-12)


def test_density_matches_scipy(prototype_kernel):
    x = np.array([0.3, -0.2])
    ys = np.array([[0.0, 0.0], [0.5, 0.25], [1.0, 0.5], [-1.0, 2.0]])
    cov = covariance(prototype_kernel, 0.7)
    reference = multivariate_normal(mean=cov.expB @ x, cov=cov.C).logpdf(ys)
    assert np.allclose(log_density(prototype_kernel, 0.3, x, 1.0, ys), reference, rtol=1e-12, atol=1e-12)


def test_log_density_broadcast(prototype_kernel):
    x = np.zeros((3, 1, 2))
    y = np.zeros((1, 4, 2))
    assert log_density(prototype_kernel, 0.0, x, 1.0, y).shape == (3, 4)


def test_log_density_requires_order(prototype_kernel):
    with pytest.raises(KernelError):
        log_density(prototype_kernel, 1.0, [0.0, 0.0], 1.0, [0.0, 0.0])


def test_far_tail_is_finite(prototype_kernel):
    value = float(log_density(prototype_kernel, 0.0, [0.0, 0.0], 1e-3, [0.0, 5.0]))
    assert np.isfinite(value)
    assert value < -1e6


def test_left_translation_invariance(prototype_kernel):
    B = prototype_kernel.B
    zeta = GroupElement(0.4, [0.7, -0.3])
    z = GroupElement(0.1, [0.2, 0.5])
    w = GroupElement(0.9, [0.4, 1.0])
    zz = group_compose(zeta, z, B)
    ww = group_compose(zeta, w, B)
    lhs = log_density(prototype_kernel, zz.t, zz.x, ww.t, ww.x)
    rhs = log_density(prototype_kernel, z.t, z.x, w.t, w.x)
    assert float(lhs) == pytest.approx(float(rhs), abs=1e-10)


@pytest.mark.parametrize("fixture", ["prototype_kernel", "heat_kernel", "nonhomogeneous_kernel"])
def test_normalization(fixture, request):
    k = request.getfixturevalue(fixture)
    x = np.linspace(-0.5, 0.5, k.d)
    assert normalization(k, 0.0, x, 1.0) == pytest.approx(1.0, abs=1e-8)


def test_chapman_kolmogorov(prototype_kernel):
    result = ck_residual(prototype_kernel, 0.0, [0.0, 0.0], 0.5, 1.0, [0.3, 0.1])
    assert result.residual <= 1e-6 * result.direct
    assert result.tail_bound < 1e-12


def test_chapman_kolmogorov_requires_order(prototype_kernel):
    with pytest.raises(KernelError):
        ck_residual(prototype_kernel, 0.0, [0.0, 0.0], 1.0, 1.0, [0.0, 0.0])


def test_posterior_matches_dense_precision(kinetic_kernel):
    x = np.array([0.2, -0.1, 0.3, 0.0])
    y = np.array([0.1, 0.4, -0.2, 0.5])
    center, cov = _posterior(kinetic_kernel, 0.0, x, 0.4, 1.0, y)
    first = covariance(kinetic_kernel, 0.4)
    second = covariance(kinetic_kernel, 0.6)
    E = second.expB
    P1, P2 = np.linalg.inv(first.C), np.linalg.inv(second.C)
    expected_cov = np.linalg.inv(P1 + E.T @ P2 @ E)
    expected_center = expected_cov @ (P1 @ first.expB @ x + E.T @ P2 @ y)
    assert np.allclose(cov, expected_cov, rtol=1e-8, atol=1e-12)
    assert np.allclose(center, expected_center, rtol=1e-8, atol=1e-10)
    assert np.allclose(cov, cov.T)


def test_chapman_kolmogorov_nonhomogeneous(nonhomogeneous_kernel):
    result = ck_residual(nonhomogeneous_kernel, 0.0, [0.2, -0.3], 0.4, 1.0, [0.1, 0.5])
    assert result.residual <= 1e-6 * result.direct


def test_pde_residual_exact_solution(prototype_kernel):
    # x2 - t x1 은 L_0 u = 0 의 해
    def u(t, x):
        return x[1] - t * x[0]

    residual = pde_residual(prototype_kernel, u, GroupElement(0.3, [0.4, -0.2]), 0.1)
    assert abs(residual) <= 1e-12


def test_pde_residual_second_order(prototype_kernel):
    u = kernel_function(prototype_kernel, 1.0, [0.0, 0.0])
    z = GroupElement(0.0, [0.2, 0.1])
    steps = [0.1, 0.05, 0.025, 0.0125]
    errors = [abs(pde_residual(prototype_kernel, u, z, h)) for h in steps]
    assert observed_order(steps, errors) == pytest.approx(2.0, abs=0.2)


def test_pde_residual_outside_domain(prototype_kernel):
    u = kernel_function(prototype_kernel, 1.0, [0.0, 0.0])
    with pytest.raises(KernelError):
        pde_residual(prototype_kernel, u, GroupElement(0.0, [0.0, 0.0]), 2.0)


def test_solve_cauchy_matches_closed_form(prototype_kernel):
    grid = Grid(bounds=((-6.0, 6.0), (-6.0, 6.0)), counts=(241, 241))
    P = np.eye(2)
    phi = grid.sample(lambda p: np.exp(-0.5 * np.sum(p * p, axis=-1)))
    points = np.array([[0.0, 0.0], [0.5, -0.5], [-1.0, 1.0]])
    solution = solve_cauchy(prototype_kernel, grid, phi, 0.0, 1.0, points=points)
    exact = gaussian_cauchy_solution(prototype_kernel, np.zeros(2), P, 0.0, 1.0, points)
    assert np.allclose(solution.values, exact, rtol=1e-6)
    assert solution.tail_mass < 1e-6
    assert solution.refinement_error is not None and solution.refinement_error < 1e-6


def test_solve_cauchy_shape_mismatch(prototype_kernel):
    grid = Grid(bounds=((-1.0, 1.0), (-1.0, 1.0)), counts=(5, 5))
    with pytest.raises(KernelError):
        solve_cauchy(prototype_kernel, grid, np.zeros((4, 4)), 0.0, 1.0)


@pytest.mark.parametrize("m", [(1, 1), (2, 1), (2, 2), (1, 1, 1), (2, 1, 1)])
@pytest.mark.parametrize("t", [0.01, 0.1, 1.0])
def test_covariance_methods_agree(random_drift, m, t):
    rng = np.random.default_rng(7 * sum(m) + len(m))
    k = GaussianKernel(random_drift(rng, m))
    cov = covariance(k, t)
    assert cov.quadrature_gap <= 1e-10
    quadrature = _gauss_legendre_covariance(k, t)
    assert np.linalg.norm(quadrature - cov.C) <= 1e-10 * np.linalg.norm(cov.C)
    assert np.linalg.eigvalsh(cov.C)[0] > 0.0
