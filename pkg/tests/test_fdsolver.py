import numpy as np
import pytest
from scipy.stats import multivariate_normal

from kolmogorov.fdsolver import (
    FDSolverError,
    GridDensity,
    MoserResult,
    cfl_time_step,
    estimate_fundamental_solution,
    extrapolate_fundamental_solution,
    mollified_pole,
    moser_check,
    solve_backward,
    with_cfl_steps,
)
from kolmogorov.grid import Grid, GridSolution
from kolmogorov.group_structure import DilationFamily, GroupElement
from kolmogorov.kernel import covariance, density, gaussian_cauchy_solution
from kolmogorov.verify import observed_order


def _inner(points: np.ndarray, radius: float) -> np.ndarray:
    return np.all(np.abs(points) <= radius, axis=-1)


def test_cfl_time_step(prototype_spec):
    grid = Grid(bounds=((-6.0, 6.0), (-6.0, 6.0)), counts=(121, 121), t_start=0.0, t_end=1.0)
    # 최대 속도 |x1| = 6, 간격 0.1
    assert cfl_time_step(prototype_spec, grid, safety=0.9) == pytest.approx(0.9 * 0.1 / 6.0)
    stepped = with_cfl_steps(prototype_spec, grid, safety=0.9)
    assert stepped.dt <= 0.9 * 0.1 / 6.0 + 1e-15


def test_cfl_violation(prototype_spec):
    grid = Grid(bounds=((-6.0, 6.0), (-6.0, 6.0)), counts=(121, 121), t_start=0.0, t_end=1.0, n_steps=2)
    with pytest.raises(FDSolverError, match="CFL violation"):
        solve_backward(prototype_spec, np.ones(grid.shape), grid)


def test_terminal_shape_mismatch(prototype_spec):
    grid = Grid(bounds=((-1.0, 1.0), (-1.0, 1.0)), counts=(5, 5), n_steps=2)
    with pytest.raises(FDSolverError):
        solve_backward(prototype_spec, np.ones((4, 4)), grid)


def test_constant_terminal_is_preserved(prototype_spec):
    grid = with_cfl_steps(prototype_spec, Grid(bounds=((-3.0, 3.0), (-3.0, 3.0)), counts=(31, 31), t_start=0.5))
    solution = solve_backward(prototype_spec, lambda p: np.ones(len(p)), grid)
    assert np.allclose(solution.values, 1.0, atol=1e-12)
    assert solution.metadata["scheme"] == "imex-lod-upwind"
    assert solution.metadata["cfl"] <= 1.0


def test_linear_solution(prototype_spec):
    # u(t, x) = x2 + (T - t) x1 은 L_0 u = 0 의 해
    grid = Grid(bounds=((-6.0, 6.0), (-12.0, 12.0)), counts=(121, 121), t_start=0.5, t_end=1.0, n_steps=25)
    solution = solve_backward(prototype_spec, lambda p: p[:, 1], grid)
    points = grid.points()
    mask = _inner(points, 2.0)
    expected = points[:, 1] + 0.5 * points[:, 0]
    assert np.max(np.abs(solution.values[0].reshape(-1)[mask] - expected[mask])) <= 1e-3


@pytest.mark.slow
def test_matches_closed_form_cauchy(prototype_spec, prototype_kernel):
    grid = Grid(bounds=((-6.0, 6.0), (-6.0, 6.0)), counts=(201, 201), t_start=0.75, t_end=1.0)
    grid = with_cfl_steps(prototype_spec, grid)
    solution = solve_backward(prototype_spec, lambda p: np.exp(-0.5 * np.sum(p * p, axis=-1)), grid)
    points = grid.points()
    mask = _inner(points, 2.0)
    exact = gaussian_cauchy_solution(prototype_kernel, np.zeros(2), np.eye(2), 0.75, 1.0, points[mask])
    error = np.max(np.abs(solution.values[0].reshape(-1)[mask] - exact))
    assert error <= 0.02 * np.max(exact)


def test_mollified_pole_mass():
    grid = Grid(bounds=((-2.0, 2.0), (-2.0, 2.0)), counts=(41, 41))
    bump = mollified_pole(grid, [0.0, 0.5], 0.2)
    assert bump.sum() * grid.cell_volume == pytest.approx(1.0)


def test_fundamental_solution_preconditions(prototype_spec):
    grid = Grid(bounds=((-2.0, 2.0), (-2.0, 2.0)), counts=(41, 41), t_start=0.5, t_end=1.0, n_steps=100)
    with pytest.raises(FDSolverError):
        estimate_fundamental_solution(prototype_spec, 0.9, [0.0, 0.0], 0.2, grid)
    with pytest.raises(FDSolverError):
        estimate_fundamental_solution(prototype_spec, 1.0, [0.0, 0.0], 0.1, grid)
    with pytest.raises(FDSolverError):
        estimate_fundamental_solution(prototype_spec, 1.0, [3.0, 0.0], 0.2, grid)
    with pytest.raises(FDSolverError):
        extrapolate_fundamental_solution(prototype_spec, 1.0, [0.0, 0.0], [0.2], grid)


@pytest.mark.slow
def test_fundamental_solution_matches_mollified_kernel(prototype_spec, prototype_kernel):
    eps = 0.1
    grid = Grid(bounds=((-4.0, 4.0), (-2.0, 2.0)), counts=(161, 401), t_start=0.5, t_end=1.0)
    grid = with_cfl_steps(prototype_spec, grid)
    solution = estimate_fundamental_solution(prototype_spec, 1.0, [0.0, 0.0], eps, grid)
    cov = covariance(prototype_kernel, 0.5)
    points = grid.points()
    # 완화된 극점과의 합성곱은 공분산 C + eps^2 I 인 가우스
    mean = points @ cov.expB.T
    smoothed = multivariate_normal(mean=np.zeros(2), cov=cov.C + eps * eps * np.eye(2))
    expected = smoothed.pdf(-mean)
    estimate = solution.values[0].reshape(-1)
    assert np.max(np.abs(estimate - expected)) <= 0.05 * np.max(expected)
    assert np.all(solution.values >= -1e-12)


@pytest.mark.slow
def test_variable_coefficient_fundamental_solution(variable_spec):
    grid = Grid(bounds=((-5.0, 5.0), (-3.0, 3.0)), counts=(101, 151), t_start=0.0, t_end=0.5)
    grid = with_cfl_steps(variable_spec, grid)
    solution = estimate_fundamental_solution(variable_spec, 0.5, [0.0, 0.0], 0.2, grid)
    assert np.all(solution.values >= -1e-12)
    assert np.allclose(solution.mass(), 1.0, atol=0.01)
    assert solution.metadata["eps"] == 0.2
    assert solution.metadata["assumptions"]["mu_hat"] <= 2.0


def test_grid_density_interpolates(prototype_kernel):
    grid = Grid(bounds=((-2.0, 2.0), (-2.0, 2.0)), counts=(41, 41), t_start=0.0, t_end=0.5, n_steps=5)
    pole = np.zeros(2)
    source = GridSolution.from_function(grid, lambda t, p: density(prototype_kernel, t, p, 1.0, pole))
    source.metadata.update({"T": 1.0, "y": [0.0, 0.0]})
    evaluator = GridDensity.from_solution(source)
    node = np.array([0.1, 0.2])
    value = float(evaluator.density(0.3, node, 1.0, pole))
    assert value == pytest.approx(float(density(prototype_kernel, 0.3, node, 1.0, pole)))
    with pytest.raises(FDSolverError):
        evaluator.density(0.3, node, 1.0, [1.0, 0.0])
    with pytest.raises(FDSolverError):
        evaluator.density(0.3, np.array([5.0, 0.0]), 1.0, pole)


def _kernel_solution(prototype_kernel, counts=(121, 81), n_steps=80):
    grid = Grid(bounds=((-1.0, 2.0), (-1.0, 1.0)), counts=counts, t_start=-0.1, t_end=0.7, n_steps=n_steps)
    return GridSolution.from_function(grid, lambda t, p: density(prototype_kernel, t, p, 1.0, np.zeros(2)))


def test_moser_constant_function(prototype_B):
    fam = DilationFamily(prototype_B.structure)
    grid = Grid(bounds=((-1.0, 2.0), (-1.0, 1.0)), counts=(61, 41), t_start=-0.1, t_end=0.7, n_steps=40)
    ones = GridSolution(values=np.ones((41,) + grid.shape), grid=grid)
    z0 = GroupElement(0.3, [0.5, 0.0])
    rho, r = 0.4, 0.6
    result = moser_check(ones, z0, rho, r, 1.0, prototype_B, fam)
    assert isinstance(result, MoserResult)
    assert result.lhs == 1.0
    assert result.ratio == pytest.approx((r - rho) ** (fam.Q + 2) / result.volume)


def test_moser_kernel_ratios(prototype_kernel):
    u = _kernel_solution(prototype_kernel)
    fam = prototype_kernel.fam
    z0 = GroupElement(0.3, [0.5, 0.0])
    for p in (1.0, 2.0, -1.0):
        result = moser_check(u, z0, 0.4, 0.6, p, prototype_kernel.B, fam)
        assert np.isfinite(result.ratio) and result.ratio > 0
        assert result.inner_nodes > 0 and result.outer_nodes > result.inner_nodes


@pytest.mark.slow
def test_moser_refinement_stability(prototype_kernel):
    fam = prototype_kernel.fam
    z0 = GroupElement(0.3, [0.5, 0.0])
    coarse = moser_check(_kernel_solution(prototype_kernel), z0, 0.4, 0.6, 1.0, prototype_kernel.B, fam)
    fine = moser_check(
        _kernel_solution(prototype_kernel, counts=(241, 161), n_steps=160), z0, 0.4, 0.6, 1.0,
        prototype_kernel.B, fam,
    )
    assert fine.ratio == pytest.approx(coarse.ratio, rel=0.2)


@pytest.mark.parametrize("rho, r, p", [(0.6, 0.4, 1.0), (0.1, 1.5, 1.0), (0.3, 0.6, 0.0)])
def test_moser_rejects_parameters(prototype_kernel, rho, r, p):
    u = _kernel_solution(prototype_kernel, counts=(31, 21), n_steps=8)
    with pytest.raises(FDSolverError):
        moser_check(u, GroupElement(0.3, [0.5, 0.0]), rho, r, p, prototype_kernel.B, prototype_kernel.fam)


def test_moser_cylinder_exits_grid(prototype_kernel):
    u = _kernel_solution(prototype_kernel, counts=(31, 21), n_steps=8)
    with pytest.raises(FDSolverError, match="cylinder exits grid"):
        moser_check(u, GroupElement(0.3, [1.9, 0.0]), 0.3, 0.6, 1.0, prototype_kernel.B, prototype_kernel.fam)


def test_moser_rejects_negative_values(prototype_B):
    fam = DilationFamily(prototype_B.structure)
    grid = Grid(bounds=((-1.0, 2.0), (-1.0, 1.0)), counts=(31, 21), t_start=-0.1, t_end=0.7, n_steps=8)
    negative = GridSolution(values=-np.ones((9,) + grid.shape), grid=grid)
    with pytest.raises(FDSolverError):
        moser_check(negative, GroupElement(0.3, [0.5, 0.0]), 0.3, 0.6, 1.0, prototype_B, fam)


@pytest.mark.parametrize("fixture", ["prototype_spec", "variable_spec"])
def test_discrete_maximum_principle(fixture, request):
    spec = request.getfixturevalue(fixture)
    grid = with_cfl_steps(spec, Grid(bounds=((-3.0, 3.0), (-3.0, 3.0)), counts=(41, 41), t_start=0.6, t_end=1.0))
    rng = np.random.default_rng(5)
    phi = rng.uniform(0.2, 0.9, size=grid.shape)
    solution = solve_backward(spec, phi, grid)
    assert np.min(solution.values) >= phi.min() - 1e-12
    assert np.max(solution.values) <= phi.max() + 1e-12


@pytest.mark.slow
def test_grid_convergence_order(prototype_spec, prototype_kernel):
    spacings, errors = [], []
    for counts in (61, 121, 241):
        grid = Grid(bounds=((-6.0, 6.0), (-6.0, 6.0)), counts=(counts, counts), t_start=0.75, t_end=1.0)
        grid = with_cfl_steps(prototype_spec, grid)
        solution = solve_backward(prototype_spec, lambda p: np.exp(-0.5 * np.sum(p * p, axis=-1)), grid)
        points = grid.points()
        mask = _inner(points, 2.0)
        exact = gaussian_cauchy_solution(prototype_kernel, np.zeros(2), np.eye(2), 0.75, 1.0, points[mask])
        spacings.append(float(np.max(grid.spacings)))
        errors.append(float(np.max(np.abs(solution.values[0].reshape(-1)[mask] - exact))))
    assert errors[0] > errors[1] > errors[2]
    assert observed_order(spacings, errors) >= 0.9


def test_fundamental_solution_peak_location(prototype_spec, prototype_kernel):
    pole = np.array([0.5, 0.3])
    grid = Grid(bounds=((-2.0, 3.0), (-1.5, 1.5)), counts=(101, 301), t_start=0.9, t_end=1.0)
    grid = with_cfl_steps(prototype_spec, grid)
    solution = estimate_fundamental_solution(prototype_spec, 1.0, pole, 0.1, grid)
    # Gamma(t, x; T, y) 의 x 에 대한 최대는 e^{(T-t)B} x = y
    center = np.linalg.solve(covariance(prototype_kernel, 0.1).expB, pole)
    peak = grid.points()[int(np.argmax(solution.values[0]))]
    assert np.all(np.abs(peak - center) <= grid.spacings)
    assert abs(peak[1] - pole[1]) > 2.0 * grid.spacings[1]
