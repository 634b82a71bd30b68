import numpy as np
import pytest
from scipy.stats import multivariate_normal

from kolmogorov.coeff_expr import CoefficientField, OperatorSpec, ValidationBox
from kolmogorov.kernel import covariance
from kolmogorov.simulate import (
    SampleBatch,
    SimulationError,
    default_bandwidth,
    energy_distance,
    energy_test,
    euler_maruyama,
    kde_density,
    mahalanobis_mean,
    sample_exact,
)

ORIGIN = np.zeros(2)


def test_sample_exact_is_deterministic(prototype_kernel):
    first = sample_exact(prototype_kernel, 0.0, ORIGIN, 1.0, 10000, seed=7)
    second = sample_exact(prototype_kernel, 0.0, ORIGIN, 1.0, 10000, seed=7)
    assert np.array_equal(first.points, second.points)
    other = sample_exact(prototype_kernel, 0.0, ORIGIN, 1.0, 10000, seed=8)
    assert not np.array_equal(first.points, other.points)


def test_sample_exact_independent_of_threads(prototype_kernel):
    serial = sample_exact(prototype_kernel, 0.0, ORIGIN, 1.0, 9000, seed=3, threads=1)
    parallel = sample_exact(prototype_kernel, 0.0, ORIGIN, 1.0, 9000, seed=3, threads=3)
    assert np.array_equal(serial.points, parallel.points)


def test_sample_exact_prefix_stable(prototype_kernel):
    # 블록 단위 스트림: 앞쪽 표본은 n 과 무관
    small = sample_exact(prototype_kernel, 0.0, ORIGIN, 1.0, 5000, seed=1)
    large = sample_exact(prototype_kernel, 0.0, ORIGIN, 1.0, 9000, seed=1)
    assert np.array_equal(small.points, large.points[:5000])


def test_sample_exact_zero_horizon(prototype_kernel):
    batch = sample_exact(prototype_kernel, 0.5, [1.0, 2.0], 0.5, 4, seed=0)
    assert np.array_equal(batch.points, np.tile([1.0, 2.0], (4, 1)))


@pytest.mark.parametrize("n", [0, -5])
def test_sample_count_must_be_positive(prototype_kernel, n):
    with pytest.raises(SimulationError):
        sample_exact(prototype_kernel, 0.0, ORIGIN, 1.0, n, seed=0)


def test_sample_exact_moments(prototype_kernel):
    n = 100000
    batch = sample_exact(prototype_kernel, 0.0, [0.5, -0.5], 1.0, n, seed=11)
    cov = covariance(prototype_kernel, 1.0)
    mean = cov.expB @ np.array([0.5, -0.5])
    C = cov.C
    se_mean = np.sqrt(np.diag(C) / n)
    assert np.all(np.abs(batch.points.mean(axis=0) - mean) <= 4.0 * se_mean)
    sample_cov = np.cov(batch.points, rowvar=False)
    se_cov = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C * C) / n)
    assert np.all(np.abs(sample_cov - C) <= 4.0 * se_cov)
    assert mahalanobis_mean(batch, prototype_kernel) == pytest.approx(2.0, abs=0.05)


def test_mahalanobis_mean_whitens_with_cholesky_factor(prototype_kernel):
    # X = E x + L e_i 이면 각 표본의 ||L^{-1}(X - E x)||^2 = 1
    x = np.array([0.5, -0.5])
    cov = covariance(prototype_kernel, 0.3)
    points = (cov.expB @ x)[None, :] + cov.chol.T
    batch = SampleBatch(points=points, seed=0, meta={"t": 0.7, "T": 1.0, "x": x.tolist()})
    assert mahalanobis_mean(batch, prototype_kernel) == pytest.approx(1.0, rel=1e-9)


def test_to_frame_columns(prototype_kernel):
    frame = sample_exact(prototype_kernel, 0.0, ORIGIN, 1.0, 10, seed=0).to_frame()
    assert list(frame.columns) == ["x1", "x2"]
    assert len(frame) == 10


def test_default_bandwidth(prototype_kernel):
    assert default_bandwidth(10 ** 8, prototype_kernel.fam) == pytest.approx(10 ** (-1.0))


@pytest.mark.slow
def test_kde_matches_smoothed_density(prototype_kernel):
    h = 0.2
    batch = sample_exact(prototype_kernel, 0.0, ORIGIN, 1.0, 10 ** 6, seed=5)
    estimate = float(kde_density(batch, prototype_kernel.fam, h, ORIGIN)[0])
    widths = h ** prototype_kernel.fam.exponents
    smoothed = covariance(prototype_kernel, 1.0).C + np.diag(widths ** 2)
    expected = multivariate_normal(mean=ORIGIN, cov=smoothed).pdf(ORIGIN)
    assert estimate == pytest.approx(expected, rel=0.05)


def test_kde_rejects_bad_bandwidth(prototype_kernel):
    batch = sample_exact(prototype_kernel, 0.0, ORIGIN, 1.0, 10, seed=0)
    with pytest.raises(SimulationError):
        kde_density(batch, prototype_kernel.fam, -1.0, ORIGIN)


def test_euler_maruyama_deterministic(prototype_spec):
    first = euler_maruyama(prototype_spec, 0.0, ORIGIN, 1.0, 20, 500, seed=2)
    second = euler_maruyama(prototype_spec, 0.0, ORIGIN, 1.0, 20, 500, seed=2, threads=2)
    assert np.array_equal(first.points, second.points)
    assert first.meta["scheme"] == "euler"


@pytest.mark.slow
def test_euler_maruyama_matches_exact(prototype_spec, prototype_kernel):
    euler = euler_maruyama(prototype_spec, 0.0, ORIGIN, 1.0, 200, 500, seed=1)
    exact = sample_exact(prototype_kernel, 0.0, ORIGIN, 1.0, 500, seed=2)
    result = energy_test(euler.points, exact.points, permutations=199, seed=0)
    assert result["p_value"] > 0.01


def test_euler_maruyama_variable_coefficients(variable_spec):
    batch = euler_maruyama(
        variable_spec, 0.0, ORIGIN, 0.5, 50, 200, seed=0,
        probe_box=ValidationBox(t_range=(0.0, 0.5), x_ranges=((-3.0, 3.0),)),
    )
    assert batch.points.shape == (200, 2)
    assert np.all(np.isfinite(batch.points))


def _spec(prototype_B, a, c="0"):
    coeffs = CoefficientField.from_sources([a], [], c, d=2)
    return OperatorSpec(blocks=prototype_B.structure, B=prototype_B, coeffs=coeffs, mu=4.0)


def test_euler_maruyama_rejects_zeroth_order(prototype_B):
    with pytest.raises(SimulationError, match="c != 0"):
        euler_maruyama(_spec(prototype_B, "0.5", c="-1"), 0.0, ORIGIN, 1.0, 10, 10, seed=0)


def test_euler_maruyama_rejects_diffused_dependence(prototype_B):
    with pytest.raises(SimulationError, match="diffused coordinate"):
        euler_maruyama(_spec(prototype_B, "1 + 0.5*sin(x1)"), 0.0, ORIGIN, 1.0, 10, 10, seed=0)


def test_euler_maruyama_rejects_bad_steps(prototype_spec):
    with pytest.raises(SimulationError):
        euler_maruyama(prototype_spec, 0.0, ORIGIN, 1.0, 0, 10, seed=0)


def test_energy_distance():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(300, 2))
    assert energy_distance(a, a) == pytest.approx(0.0, abs=1e-12)
    shifted = energy_distance(a, a + 3.0)
    assert shifted > 1.0


def test_energy_test_detects_shift():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(200, 2))
    b = rng.normal(size=(200, 2)) + 1.0
    assert energy_test(a, b, permutations=99, seed=0)["p_value"] <= 0.01
