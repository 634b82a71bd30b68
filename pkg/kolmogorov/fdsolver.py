"""변수계수 L 에 대한 역방향 Cauchy 문제의 유한차분 해법

발산형 연산자

    Lu = sum d_i(a_ij d_j u) + sum d_i(a_i u) + c u + <Bx, Du> + d_t u = 0

를 종단 시각 T 에서 시작해 시간을 거슬러 진행한다. 확산 좌표 x_1..x_m0 의 대각 확산은
축별 암시적 (LOD, 삼중대각 풀이), 나머지 항은 명시적 1차 upwind 로 처리한다.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Sequence, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import solve_banded

from kolmogorov.coeff_expr import OperatorSpec, ValidationBox, check_assumptions
from kolmogorov.grid import Grid, GridSolution
from kolmogorov.group_structure import (
    Cylinder,
    DilationFamily,
    DriftLike,
    GroupElement,
    cylinder_bounding_box,
    cylinder_mask,
)

logger = logging.getLogger(__name__)

MAX_DIMENSION = 3
SCHEME = "imex-lod-upwind"
CFL_LIMIT = 1.0
# 질량 상한 초과 경고 기준 (상대)
MASS_TOLERANCE = 1e-2

TerminalData = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


class FDSolverError(ValueError):
    """유한차분 해법 오류"""


# ---------------------------------------------------------------------------
# 이산 연산자
# ---------------------------------------------------------------------------

def _solve_lines(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """마지막 축을 따라 놓인 삼중대각 계들을 하나의 띠 행렬로 이어 붙여 풀이

    각 줄의 lower[..., 0] 과 upper[..., -1] 은 0 이므로 줄 사이 결합은 없다.
    """
    L, D, U = lower.reshape(-1), diag.reshape(-1), upper.reshape(-1)
    ab = np.zeros((3, D.size))
    ab[0, 1:] = U[:-1]
    ab[1] = D
    ab[2, :-1] = L[1:]
    return solve_banded((1, 1), ab, rhs.reshape(-1)).reshape(rhs.shape)


def _implicit_diffusion(u: np.ndarray, a: np.ndarray, axis: int, h: float, dt: float) -> np.ndarray:
    """(I - dt d_i(a d_i)) v = u, 면 중점 계수, 양 끝 zero-flux"""
    u_line = np.moveaxis(u, axis, -1)
    a_line = np.moveaxis(a, axis, -1)
    coef = dt * 0.5 * (a_line[..., 1:] + a_line[..., :-1]) / (h * h)

    lower = np.zeros_like(u_line)
    upper = np.zeros_like(u_line)
    lower[..., 1:] = -coef
    upper[..., :-1] = -coef
    diag = 1.0 - lower - upper
    solved = _solve_lines(lower, diag, upper, u_line)
    return np.moveaxis(solved, -1, axis)


def _upwind_transport(u: np.ndarray, velocity: np.ndarray, spacings: np.ndarray) -> np.ndarray:
    """<v, Du> 의 upwind 차분 (바깥 경계는 복사)"""
    out = np.zeros_like(u)
    for j, h in enumerate(spacings):
        v = velocity[..., j]
        if not np.any(v):
            continue
        forward = np.diff(u, axis=j, append=np.take(u, [-1], axis=j)) / h
        backward = np.diff(u, axis=j, prepend=np.take(u, [0], axis=j)) / h
        out += np.where(v > 0.0, v * forward, v * backward)
    return out


def _drift_divergence(u: np.ndarray, drift: np.ndarray, axis: int, h: float) -> np.ndarray:
    """d_i(a_i u) 를 보존형 upwind 플럭스로 (경계 면 플럭스 0)"""
    u_line = np.moveaxis(u, axis, -1)
    w = -np.moveaxis(drift, axis, -1)
    w_face = 0.5 * (w[..., 1:] + w[..., :-1])
    flux = np.maximum(w_face, 0.0) * u_line[..., :-1] + np.minimum(w_face, 0.0) * u_line[..., 1:]
    padded = np.zeros(u_line.shape[:-1] + (u_line.shape[-1] + 1,))
    padded[..., 1:-1] = flux
    return np.moveaxis(-(padded[..., 1:] - padded[..., :-1]) / h, -1, axis)


def _cross_diffusion(u: np.ndarray, a: np.ndarray, spacings: np.ndarray, m0: int) -> np.ndarray:
    out = np.zeros_like(u)
    for i in range(m0):
        for j in range(m0):
            if i == j or not np.any(a[..., i, j]):
                continue
            grad = np.gradient(u, spacings[j], axis=j)
            out += np.gradient(a[..., i, j] * grad, spacings[i], axis=i)
    return out


def _transport_rate(velocity: np.ndarray, drift: np.ndarray, spacings: np.ndarray) -> float:
    """max_x sum_j |v_j| / h_j (drift 포함)"""
    rate = np.sum(np.abs(velocity) / spacings, axis=-1)
    m0 = drift.shape[-1]
    rate = rate + np.sum(np.abs(drift) / spacings[:m0], axis=-1)
    return float(np.max(rate))


# ---------------------------------------------------------------------------
# 역방향 풀이
# ---------------------------------------------------------------------------

def _check_grid(spec: OperatorSpec, grid: Grid):
    if spec.d > MAX_DIMENSION:
        raise FDSolverError(f"유한차분 해법은 d <= {MAX_DIMENSION} 만 지원합니다: d={spec.d}")
    if grid.d != spec.d:
        raise FDSolverError(f"격자 차원 {grid.d} 가 연산자 차원 {spec.d} 와 다릅니다")


def _coefficients(spec: OperatorSpec, grid: Grid, points: np.ndarray, t: float):
    a, drift, c = spec.coeffs.evaluate(t, points)
    shape = grid.shape
    c = np.broadcast_to(c, (len(points),))
    return a.reshape(shape + a.shape[-2:]), drift.reshape(shape + drift.shape[-1:]), c.reshape(shape)


def _velocity(spec: OperatorSpec, grid: Grid, points: np.ndarray) -> np.ndarray:
    return (points @ spec.B.entries.T).reshape(grid.shape + (spec.d,))


def cfl_time_step(spec: OperatorSpec, grid: Grid, safety: float = 0.9, samples: int = 3) -> float:
    """수송 항 CFL 조건을 만족하는 최대 시간 간격 (수송이 없으면 inf)"""
    _check_grid(spec, grid)
    if not 0.0 < safety <= 1.0:
        raise FDSolverError(f"safety 는 (0, 1] 범위여야 합니다: {safety}")
    points = grid.points()
    velocity = _velocity(spec, grid, points)
    rate = 0.0
    for t in np.linspace(grid.t_start, grid.t_end, samples):
        _, drift, _ = _coefficients(spec, grid, points, float(t))
        rate = max(rate, _transport_rate(velocity, drift, grid.spacings))
    return float("inf") if rate == 0.0 else safety * CFL_LIMIT / rate


def with_cfl_steps(spec: OperatorSpec, grid: Grid, safety: float = 0.9) -> Grid:
    """CFL 을 만족하도록 시간 간격 수를 정한 격자"""
    dt = cfl_time_step(spec, grid, safety)
    span = grid.t_end - grid.t_start
    if not np.isfinite(dt) or span == 0.0:
        return grid
    return grid.with_steps(max(grid.n_steps, int(np.ceil(span / dt))))


def _terminal_values(grid: Grid, phi: TerminalData) -> np.ndarray:
    values = grid.sample(phi) if callable(phi) else np.asarray(phi, dtype=float)
    if values.shape != grid.shape:
        raise FDSolverError(f"종단값 shape {values.shape} 가 격자 {grid.shape} 와 다릅니다")
    if not np.all(np.isfinite(values)):
        raise FDSolverError("종단값에 유한하지 않은 값이 있습니다")
    return values


def solve_backward(
        spec: OperatorSpec,
        phi: TerminalData,
        grid: Grid,
        check: bool = True,
        check_n: int = 9,
) -> GridSolution:
    """종단값 phi 에서 grid.t_end -> grid.t_start 로 IMEX 진행"""
    _check_grid(spec, grid)
    report = None
    if check:
        box = ValidationBox(t_range=(grid.t_start, grid.t_end), x_ranges=grid.bounds)
        report = check_assumptions(spec, box, n=check_n)

    points = grid.points()
    times = grid.times
    dt = grid.dt
    spacings = grid.spacings
    velocity = _velocity(spec, grid, points)
    m0 = spec.m0

    values = np.empty((len(times),) + grid.shape)
    values[-1] = _terminal_values(grid, phi)
    cfl = 0.0

    for k in range(len(times) - 2, -1, -1):
        u = values[k + 1]
        # 명시적 부분: t_{k+1} 의 계수
        a, drift, c = _coefficients(spec, grid, points, float(times[k + 1]))
        step_cfl = dt * _transport_rate(velocity, drift, spacings)
        cfl = max(cfl, step_cfl)
        if step_cfl > CFL_LIMIT * (1.0 + 1e-12):
            raise FDSolverError(
                f"CFL 조건 위반 (CFL violation): {step_cfl:.4g} > {CFL_LIMIT:g}, dt={dt:.4g}"
            )

        rhs = _upwind_transport(u, velocity, spacings) + c * u
        for i in range(m0):
            rhs += _drift_divergence(u, drift[..., i], i, spacings[i])
        if m0 > 1:
            rhs += _cross_diffusion(u, a, spacings, m0)
        u = u + dt * rhs

        # 암시적 부분: t_k 의 대각 확산
        a_new, _, _ = _coefficients(spec, grid, points, float(times[k]))
        for i in range(m0):
            u = _implicit_diffusion(u, a_new[..., i, i], i, spacings[i], dt)
        values[k] = u

    if not np.all(np.isfinite(values)):
        raise FDSolverError("해가 유한하지 않습니다 (발산)")
    logger.info("역방향 풀이 완료: 격자 %s, 시간 단계 %d, CFL %.3f", grid.shape, grid.n_steps, cfl)

    metadata = {
        "scheme": SCHEME,
        "order": {"time": 1, "space": 1},
        "cfl": cfl,
        "dt": dt,
    }
    if report is not None:
        metadata["assumptions"] = report.to_dict()
    return GridSolution(values=values, grid=grid, metadata=metadata)


# ---------------------------------------------------------------------------
# 기본해 추정
# ---------------------------------------------------------------------------

def mollified_pole(grid: Grid, y, eps: float) -> np.ndarray:
    """공분산 eps^2 I 인 가우스 bump, 이산 질량 1 로 정규화"""
    y = np.asarray(y, dtype=float)
    bump = grid.sample(lambda p: np.exp(-0.5 * np.sum((p - y) ** 2, axis=-1) / (eps * eps)))
    total = bump.sum() * grid.cell_volume
    if not total > 0.0:
        raise FDSolverError(f"극점 y={y.tolist()} 근처에 격자 노드가 없습니다")
    return bump / total


def mass_bound(spec: OperatorSpec, T: float, times: np.ndarray, c_sup: float) -> np.ndarray:
    """int Gamma(t, x; T, y) dx <= e^{(T-t)(||c|| - tr B)}"""
    trace = float(np.trace(spec.B.entries))
    return np.exp((T - np.asarray(times)) * (c_sup - trace))


def estimate_fundamental_solution(
        spec: OperatorSpec,
        T: float,
        y,
        eps: float,
        grid: Grid,
        check: bool = True,
) -> GridSolution:
    """완화된 극점에서 역방향으로 풀어 Gamma(t, .; T, y) 를 추정"""
    _check_grid(spec, grid)
    if abs(grid.t_end - T) > 1e-12 * max(1.0, abs(T)):
        raise FDSolverError(f"격자 종단 시각 {grid.t_end} 가 T={T} 와 다릅니다")
    max_h = float(np.max(grid.spacings))
    if eps < 2.0 * max_h:
        raise FDSolverError(f"eps={eps} 는 최대 격자 간격의 두 배 {2.0 * max_h:.4g} 이상이어야 합니다")
    y = np.asarray(y, dtype=float)
    if not grid.contains(y, y):
        raise FDSolverError(f"극점 y={y.tolist()} 가 격자 밖에 있습니다")

    solution = solve_backward(spec, mollified_pole(grid, y, eps), grid, check=check)

    points = grid.points()
    c_sup = max(
        float(np.max(np.abs(_coefficients(spec, grid, points, float(t))[2])))
        for t in (grid.t_start, grid.t_end)
    )
    mass = solution.mass()
    bound = mass_bound(spec, T, solution.times, c_sup)
    excess = float(np.max(mass / bound - 1.0))
    if excess > MASS_TOLERANCE:
        logger.warning("질량이 상한을 %.2f%% 넘습니다", 100.0 * excess)

    solution.metadata.update({
        "T": float(T),
        "y": y.tolist(),
        "eps": float(eps),
        "mass": mass.tolist(),
        "mass_bound": bound.tolist(),
    })
    return solution


def extrapolate_fundamental_solution(
        spec: OperatorSpec,
        T: float,
        y,
        eps_values: Sequence[float],
        grid: Grid,
        threads: int = 1,
) -> GridSolution:
    """eps^2 에 대한 Richardson 외삽 (eps -> 0)"""
    eps_values = [float(e) for e in eps_values]
    if len(eps_values) < 2 or len(set(eps_values)) != len(eps_values):
        raise FDSolverError(f"서로 다른 eps 가 두 개 이상 필요합니다: {eps_values}")

    # 독립 풀이는 동시에
    solutions = Parallel(n_jobs=threads, prefer="threads")(
        delayed(estimate_fundamental_solution)(spec, T, y, eps, grid, check=(n == 0))
        for n, eps in enumerate(eps_values)
    )
    design = np.column_stack([np.ones(len(eps_values)), np.square(eps_values)])
    stacked = np.stack([s.values.reshape(-1) for s in solutions])
    coef, *_ = np.linalg.lstsq(design, stacked, rcond=None)
    values = coef[0].reshape(solutions[0].values.shape)

    metadata = dict(solutions[0].metadata)
    metadata.update({"eps": eps_values, "extrapolated": True, "mass": (values.sum(
        axis=tuple(range(1, values.ndim))) * grid.cell_volume).tolist()})
    return GridSolution(values=values, grid=grid, metadata=metadata)


@dataclass
class GridDensity:
    """격자 해를 (t, x) 에서 보간하는 밀도 계산기 (극점 (T, y) 고정)"""
    solution: GridSolution
    T: float
    y: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        g = self.solution.grid
        self._interpolator = RegularGridInterpolator(
            (self.solution.times,) + g.axes, self.solution.values, bounds_error=True,
        )

    @classmethod
    def from_solution(cls, solution: GridSolution) -> "GridDensity":
        return cls(solution=solution, T=solution.metadata["T"], y=np.asarray(solution.metadata["y"]))

    def _check_pole(self, T: float, y):
        y = np.reshape(np.asarray(y, dtype=float), (-1, len(self.y)))
        if abs(T - self.T) > 1e-12 or not np.allclose(y, self.y[None, :], rtol=0.0, atol=1e-12):
            raise FDSolverError(
                f"격자 밀도는 극점 (T={self.T}, y={self.y.tolist()}) 에서만 계산됩니다"
            )

    def density(self, t, x, T: float, y) -> np.ndarray:
        self._check_pole(T, y)
        x = np.asarray(x, dtype=float)
        t_full = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
        query = np.concatenate([t_full[..., None], x], axis=-1)
        try:
            return self._interpolator(query)
        except ValueError as e:
            raise FDSolverError(f"격자 밖 보간 요청: {e}")

    def log_density(self, t, x, T: float, y) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(self.density(t, x, T, y), 0.0))


# ---------------------------------------------------------------------------
# Moser 검사
# ---------------------------------------------------------------------------

@dataclass
class MoserResult:
    lhs: float
    rhs: float
    ratio: float
    volume: float
    inner_nodes: int
    outer_nodes: int
    p: float
    rho: float
    r: float

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


def moser_check(
        u: GridSolution,
        z0: GroupElement,
        rho: float,
        r: float,
        p: float,
        B: DriftLike,
        fam: DilationFamily,
        tol: float = 1e-8,
) -> MoserResult:
    """sup_{R_rho} u^p 와 (r - rho)^{-(Q+2)} int_{R_r} u^p 비교 (노드 지시함수 리만 합)"""
    if not 0.0 < rho < r:
        raise FDSolverError(f"0 < rho < r 이어야 합니다: rho={rho}, r={r}")
    if not r - rho < 1.0:
        raise FDSolverError(f"r - rho < 1 이어야 합니다: r - rho={r - rho}")
    if p == 0:
        raise FDSolverError("p 는 0 이 아니어야 합니다")

    grid = u.grid
    outer = Cylinder(center=z0, radius=r)
    inner = Cylinder(center=z0, radius=rho)
    t_range, lo, hi = cylinder_bounding_box(outer, B, fam)
    if t_range[0] < grid.t_start or t_range[1] > grid.t_end or not grid.contains(lo, hi):
        raise FDSolverError(
            f"원기둥이 격자를 벗어납니다 (cylinder exits grid): t={t_range}, x in [{lo}, {hi}]"
        )

    points = grid.points()
    weight = grid.cell_volume * grid.dt
    lhs = -np.inf
    integral = 0.0
    volume = 0.0
    inner_nodes = outer_nodes = 0
    for k, t in enumerate(u.times):
        mask_r = cylinder_mask(outer, float(t), points, B, fam)
        if not np.any(mask_r):
            continue
        values = u.values[k].reshape(-1)[mask_r]
        if np.min(values) < -tol:
            raise FDSolverError(f"원기둥 안에서 u 가 음수입니다: min={np.min(values):.3e} at t={t}")
        if p < 0 and np.min(values) <= 0.0:
            raise FDSolverError("p < 0 이면 원기둥 안에서 u > 0 이어야 합니다")
        powered = np.maximum(values, 0.0) ** p
        integral += float(np.sum(powered)) * weight
        volume += float(mask_r.sum()) * weight
        outer_nodes += int(mask_r.sum())

        mask_rho = cylinder_mask(inner, float(t), points, B, fam)
        if np.any(mask_rho):
            inner_values = np.maximum(u.values[k].reshape(-1)[mask_rho], 0.0) ** p
            lhs = max(lhs, float(np.max(inner_values)))
            inner_nodes += int(mask_rho.sum())

    if inner_nodes == 0:
        raise FDSolverError(f"R_rho 안에 격자 노드가 없습니다 (rho={rho})")
    rhs = (r - rho) ** (-(fam.Q + 2)) * integral
    ratio = lhs / rhs if rhs > 0 else float("inf")
    return MoserResult(
        lhs=lhs, rhs=rhs, ratio=ratio, volume=volume,
        inner_nodes=inner_nodes, outer_nodes=outer_nodes, p=float(p), rho=float(rho), r=float(r),
    )
