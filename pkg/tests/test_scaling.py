import numpy as np
import pytest

from kolmogorov.coeff_expr import CoefficientField, OperatorSpec
from kolmogorov.group_structure import DilationFamily, GroupElement, group_inverse, validate_blocks
from kolmogorov.kernel import GaussianKernel
from kolmogorov.scaling import (
    ScalingError,
    generalized_scaled_kernel_check,
    sample_coefficients,
    scale_operator,
    scaled_drift_matrix,
    scaled_kernel_check,
    translate_operator,
)


@pytest.mark.parametrize("lam", [0.25, 0.5, 2.0])
def test_scaled_kernel_check_homogeneous(prototype_kernel, lam):
    result = scaled_kernel_check(prototype_kernel, lam, samples=100, seed=0)
    assert result.applicable
    assert result.max_rel_error <= 1e-10


def test_scaled_kernel_check_kinetic(kinetic_kernel):
    result = scaled_kernel_check(kinetic_kernel, 0.5, samples=50, seed=1)
    assert result.max_rel_error <= 1e-10


def test_scaled_kernel_check_nonhomogeneous(nonhomogeneous_kernel):
    result = scaled_kernel_check(nonhomogeneous_kernel, 0.5)
    assert not result.applicable
    assert np.isnan(result.max_rel_error)
    assert "inapplicable" in result.reason


@pytest.mark.parametrize("lam", [0.25, 0.5])
def test_generalized_scaling_nonhomogeneous(nonhomogeneous_kernel, lam):
    result = generalized_scaled_kernel_check(nonhomogeneous_kernel, lam, samples=50)
    assert result.applicable
    assert result.max_rel_error <= 1e-10


def test_scaled_drift_matrix():
    B = validate_blocks([[0.1, 0.0], [1.0, 0.0]], (1, 1))
    scaled = scaled_drift_matrix(B, 0.5)
    # 대각 블록은 lambda^2 배, 부대각 블록은 보존
    assert np.allclose(scaled.entries, [[0.025, 0.0], [1.0, 0.0]])


def test_scaled_drift_matrix_homogeneous_is_fixed(prototype_B):
    assert np.array_equal(scaled_drift_matrix(prototype_B, 0.3).entries, prototype_B.entries)


def test_scale_operator_coefficients(prototype_B):
    coeffs = CoefficientField.from_sources(["1 + 0.5*sin(x2)"], ["x1"], "t", d=2)
    spec = OperatorSpec(blocks=prototype_B.structure, B=prototype_B, coeffs=coeffs, mu=2.0)
    lam = 0.5
    scaled = scale_operator(spec, lam)
    fam = DilationFamily(prototype_B.structure)
    x = np.array([[0.4, -0.6]])
    t = 0.8
    a, drift, c = scaled.spec.coeffs.evaluate(t, x)
    tt, xx = lam * lam * t, x * fam.diagonal(lam)
    a0, drift0, c0 = coeffs.evaluate(tt, xx)
    assert np.allclose(a, a0)
    assert np.allclose(drift, lam * drift0)
    assert np.allclose(c, lam * lam * c0)


@pytest.mark.parametrize("lam", [0.0, 1.5])
def test_scale_operator_range(prototype_spec, lam):
    with pytest.raises(ScalingError):
        scale_operator(prototype_spec, lam)


def test_translate_operator(variable_spec):
    zeta = GroupElement(0.2, [0.5, 1.0])
    translated = translate_operator(variable_spec, zeta)
    x = np.array([[0.1, 0.3]])
    a, _, _ = translated.coeffs.evaluate(0.3, x)
    shifted = x + variable_spec.B.exp(0.3) @ zeta.x
    assert float(a[0, 0, 0]) == pytest.approx(1.0 + 0.5 * np.sin(shifted[0, 1]))
    with pytest.raises(ScalingError):
        translate_operator(variable_spec, GroupElement(0.0, [1.0]))


def test_sample_coefficients(variable_spec):
    sample = sample_coefficients(variable_spec.coeffs, np.zeros((2, 2)), 0.0)
    assert sample["a"] == [[[1.0]], [[1.0]]]
    assert sample["c"] == [0.0, 0.0]


def test_kernel_scaling_identity_direct(prototype_kernel):
    # lambda^Q Gamma(delta_l z; delta_l w) = Gamma(z; w)
    lam = 0.3
    fam = prototype_kernel.fam
    x, y = np.array([0.2, -0.1]), np.array([0.5, 0.4])
    lhs = fam.Q * np.log(lam) + prototype_kernel.log_density(
        lam * lam * 0.1, fam.diagonal(lam) * x, lam * lam * 0.9, fam.diagonal(lam) * y
    )
    rhs = prototype_kernel.log_density(0.1, x, 0.9, y)
    assert float(lhs) == pytest.approx(float(rhs), abs=1e-10)


def test_generalized_kernel_matches_scaled_B(nonhomogeneous_kernel):
    scaled = GaussianKernel(scaled_drift_matrix(nonhomogeneous_kernel.B, 0.5))
    assert not scaled.B.homogeneous


@pytest.mark.parametrize("m", [(1, 1), (2, 1), (2, 2), (1, 1, 1), (2, 1, 1)])
@pytest.mark.parametrize("lam", [0.3, 0.8])
def test_scaled_drift_matrix_block_rule(random_drift, m, lam):
    rng = np.random.default_rng(sum(m) + len(m))
    B = random_drift(rng, m)
    scaled = scaled_drift_matrix(B, lam)
    structure = B.structure
    for i in range(len(structure.m)):
        for j in range(len(structure.m)):
            rows, cols = structure.block_slice(i), structure.block_slice(j)
            if i > j + 1:
                assert np.all(scaled.entries[rows, cols] == 0.0)
                continue
            expected = lam ** (2 * (j - i + 1)) * B.entries[rows, cols]
            assert np.allclose(scaled.entries[rows, cols], expected, rtol=1e-12, atol=1e-15)
    conjugated = lam * lam * np.diag(1.0 / DilationFamily(structure).diagonal(lam)) @ B.entries @ np.diag(
        DilationFamily(structure).diagonal(lam)
    )
    assert np.allclose(scaled.entries, conjugated, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_translate_operator_round_trip(variable_spec, seed):
    rng = np.random.default_rng(seed)
    zeta = GroupElement(rng.normal(), rng.normal(size=2))
    inverse = group_inverse(zeta, variable_spec.B)
    round_trip = translate_operator(translate_operator(variable_spec, zeta), inverse)
    points = rng.normal(size=(20, 2))
    t = rng.uniform(0.0, 1.0)
    for got, expected in zip(round_trip.coeffs.evaluate(t, points), variable_spec.coeffs.evaluate(t, points)):
        assert np.allclose(got, expected, atol=1e-10)
