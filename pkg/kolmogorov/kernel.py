"""상수계수 주부 L_0 의 가우스 기본해와 관련 계산

L_0 = 1/2 sum_{i<=m0} d_{x_i x_i} + <Bx, D> + d_t 의 기본해는 선형 SDE
dX = BX dt + sigma dW, sigma = [I_{m0}; 0] 의 전이밀도이며

    Gamma_0(t, x; T, y) = N(y; e^{(T-t)B} x, C(T-t)),
    C(t) = int_0^t (e^{sB} sigma)(e^{sB} sigma)^T ds

이다. 모든 밀도는 로그 공간에서 계산하고 마지막에 지수를 취한다.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import cho_factor, cho_solve, cholesky, expm, solve_triangular
from scipy.special import erfc

from kolmogorov.grid import Grid
from kolmogorov.group_structure import (
    DilationFamily,
    DriftMatrix,
    controllability_gramian,
    hypoellipticity_check,
)

logger = logging.getLogger(__name__)

COVARIANCE_AGREEMENT = 1e-10
QUADRATURE_NODES = 20
MAX_PANELS = 256
# 절단 상자 반폭 (표준편차 단위)
TRUNCATION_SIGMAS = 8.0
LOG_2PI = float(np.log(2.0 * np.pi))


class KernelError(ValueError):
    """기본해 계산 오류"""


@dataclass(frozen=True)
class CovarianceResult:
    t: float
    C: np.ndarray
    chol: np.ndarray
    logdet: float
    expB: np.ndarray
    quadrature_gap: float = 0.0


@dataclass(frozen=True)
class GaussianKernel:
    """Gamma_0 계산기"""
    B: DriftMatrix
    _cache: Dict[float, CovarianceResult] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not hypoellipticity_check(self.B, self.B.m0):
            raise KernelError("B 가 hypoellipticity 조건을 만족하지 않습니다")

    @property
    def d(self) -> int:
        return self.B.d

    @property
    def m0(self) -> int:
        return self.B.m0

    @property
    def fam(self) -> DilationFamily:
        return DilationFamily(self.B.structure)

    @property
    def sigma(self) -> np.ndarray:
        s = np.zeros((self.d, self.m0))
        s[: self.m0, : self.m0] = np.eye(self.m0)
        return s

    def covariance(self, t: float) -> CovarianceResult:
        return covariance(self, t)

    def mean(self, t: float, x: np.ndarray, T: float) -> np.ndarray:
        """e^{(T-t)B} x"""
        E = self.B.exp(T - t)
        return np.asarray(x, dtype=float) @ E.T

    def log_density(self, t: float, x, T: float, y) -> np.ndarray:
        return log_density(self, t, x, T, y)

    def density(self, t: float, x, T: float, y) -> np.ndarray:
        return density(self, t, x, T, y)

    def log_peak(self, tau: float) -> float:
        """sup_{x,y} log Gamma_0(t, x; t + tau, y)"""
        cov = covariance(self, tau)
        return -0.5 * self.d * LOG_2PI - 0.5 * cov.logdet


def _gauss_legendre_covariance(k: GaussianKernel, t: float, tol: float = 1e-12) -> np.ndarray:
    """복합 Gauss-Legendre 구적을 패널 수를 두 배로 늘리며 수렴시킴"""
    nodes, weights = leggauss(QUADRATURE_NODES)
    sigma = k.sigma
    entries = k.B.entries

    def composite(panels: int) -> np.ndarray:
        edges = np.linspace(0.0, t, panels + 1)
        total = np.zeros((k.d, k.d))
        for a, b in zip(edges[:-1], edges[1:]):
            half = 0.5 * (b - a)
            for s, w in zip(a + half * (nodes + 1.0), weights):
                col = expm(s * entries) @ sigma
                total += (w * half) * (col @ col.T)
        return total

    panels = 1
    previous = composite(panels)
    while panels < MAX_PANELS:
        panels *= 2
        current = composite(panels)
        if np.linalg.norm(current - previous) <= tol * np.linalg.norm(current):
            return current
        previous = current
    logger.warning("공분산 구적이 %d 패널에서 수렴하지 않았습니다 (t=%g)", panels, t)
    return previous


def covariance(k: GaussianKernel, t: float) -> CovarianceResult:
    """C(t) 를 블록 행렬 지수와 구적 두 방법으로 계산하고 일치를 확인"""
    if not t > 0:
        raise KernelError(f"공분산 시간은 양수여야 합니다: t={t}")
    t = float(t)
    cached = k._cache.get(t)
    if cached is not None:
        return cached

    C_exp, expB = controllability_gramian(k.B, k.m0, t)
    C_quad = _gauss_legendre_covariance(k, t)
    gap = float(np.linalg.norm(C_exp - C_quad) / np.linalg.norm(C_exp))
    if not gap <= COVARIANCE_AGREEMENT:
        raise KernelError(
            f"공분산 계산 방법이 일치하지 않습니다: 상대 차이 {gap:.3e} > {COVARIANCE_AGREEMENT:g} (t={t})"
        )

    try:
        chol = cholesky(C_exp, lower=True)
    except np.linalg.LinAlgError as e:
        raise KernelError(f"C({t}) 분해 실패: {e}")
    diag = np.diag(chol)
    if not np.all(diag > 0) or not np.all(np.isfinite(chol)):
        raise KernelError(f"C({t}) 가 수치적으로 특이합니다")

    result = CovarianceResult(
        t=t, C=C_exp, chol=chol, logdet=float(2.0 * np.sum(np.log(diag))), expB=expB, quadrature_gap=gap,
    )
    k._cache[t] = result
    return result


def log_density(k: GaussianKernel, t: float, x, T: float, y) -> np.ndarray:
    """log Gamma_0(t, x; T, y); x, y 는 (..., d) 로 broadcast"""
    if not t < T:
        raise KernelError(f"t < T 이어야 합니다: t={t}, T={T}")
    cov = covariance(k, T - t)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    residual = y - x @ cov.expB.T
    shape = residual.shape
    flat = residual.reshape(-1, k.d)
    # 삼각 인자로 이차형식 계산
    w = solve_triangular(cov.chol, flat.T, lower=True)
    quad = np.sum(w * w, axis=0).reshape(shape[:-1])
    return -0.5 * k.d * LOG_2PI - 0.5 * cov.logdet - 0.5 * quad


def density(k: GaussianKernel, t: float, x, T: float, y) -> np.ndarray:
    return np.exp(log_density(k, t, x, T, y))


def kernel_function(k: GaussianKernel, T: float, y) -> Callable[[float, np.ndarray], np.ndarray]:
    """(t, x) -> Gamma_0(t, x; T, y)"""
    y = np.asarray(y, dtype=float)

    def u(t, x):
        return density(k, t, x, T, y)

    return u


def gaussian_cauchy_solution(
        k: GaussianKernel, center, cov: np.ndarray, t: float, T: float, x
) -> np.ndarray:
    """종단값 phi(y) = exp(-1/2 (y-a)^T P^{-1} (y-a)) 인 역방향 Cauchy 문제의 닫힌 해"""
    center = np.asarray(center, dtype=float)
    P = np.atleast_2d(np.asarray(cov, dtype=float))
    x = np.asarray(x, dtype=float)
    C = covariance(k, T - t)
    S = C.C + P
    L = cholesky(S, lower=True)
    m = x @ C.expB.T
    residual = (m - center).reshape(-1, k.d)
    w = solve_triangular(L, residual.T, lower=True)
    quad = np.sum(w * w, axis=0).reshape(x.shape[:-1])
    _, logdet_P = np.linalg.slogdet(P)
    log_value = 0.5 * logdet_P - np.sum(np.log(np.diag(L))) - 0.5 * quad
    return np.exp(log_value)


@dataclass
class CauchySolution:
    points: np.ndarray
    values: np.ndarray
    kernel_mass: np.ndarray
    refinement_error: Optional[float]
    t: float
    T: float

    @property
    def tail_mass(self) -> float:
        return float(np.max(np.abs(1.0 - self.kernel_mass)))


def _convolve(k: GaussianKernel, t: float, T: float, points: np.ndarray, nodes: np.ndarray,
              weights: np.ndarray, phi: np.ndarray, chunk: int) -> Tuple[np.ndarray, np.ndarray]:
    values = np.empty(len(points))
    mass = np.empty(len(points))
    for start in range(0, len(points), chunk):
        block = points[start:start + chunk]
        kernel = np.exp(log_density(k, t, block[:, None, :], T, nodes[None, :, :])) * weights
        values[start:start + chunk] = kernel @ phi
        mass[start:start + chunk] = kernel.sum(axis=1)
    return values, mass


def solve_cauchy(
        k: GaussianKernel,
        grid: Grid,
        phi: np.ndarray,
        t: float,
        T: float,
        points: Optional[np.ndarray] = None,
        renormalize: bool = False,
) -> CauchySolution:
    """u(t, x) = int Gamma_0(t, x; T, y) phi(y) dy 를 격자 구적으로 계산"""
    if not t < T:
        raise KernelError(f"t < T 이어야 합니다: t={t}, T={T}")
    phi = np.asarray(phi, dtype=float)
    if phi.shape != grid.shape:
        raise KernelError(f"종단값 shape {phi.shape} 가 격자 {grid.shape} 와 다릅니다")

    cov = covariance(k, T - t)
    min_std = float(np.sqrt(np.linalg.eigvalsh(cov.C)[0]))
    if np.max(grid.spacings) > min_std:
        logger.warning(
            "격자 간격 %.3g 가 sqrt(T-t) 규모 %.3g 에 비해 거칩니다", np.max(grid.spacings), min_std,
        )

    nodes = grid.points()
    points = nodes if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    flat_phi = phi.reshape(-1)
    chunk = max(1, int(2e6 // len(nodes)))
    weights = np.full(len(nodes), grid.cell_volume)
    values, mass = _convolve(k, t, T, points, nodes, weights, flat_phi, chunk)

    # 한 칸 건너 격자로 다시 계산해 오차 추정
    refinement_error = None
    if all(n % 2 == 1 and n >= 5 for n in grid.counts):
        coarse = np.zeros(grid.shape, dtype=bool)
        coarse[tuple(slice(None, None, 2) for _ in grid.counts)] = True
        mask = coarse.reshape(-1)
        coarse_values, coarse_mass = _convolve(
            k, t, T, points, nodes[mask], weights[mask] * 2 ** grid.d, flat_phi[mask], chunk
        )
        if renormalize:
            coarse_values = coarse_values / coarse_mass
        fine = values / mass if renormalize else values
        refinement_error = float(np.max(np.abs(fine - coarse_values)))

    if renormalize:
        values = values / mass
    return CauchySolution(
        points=points, values=values, kernel_mass=mass, refinement_error=refinement_error, t=t, T=T,
    )


@dataclass
class ChapmanKolmogorovResult:
    residual: float
    integral: float
    direct: float
    tail_bound: float
    panels: int


def _posterior(k: GaussianKernel, t, x, s, T, y) -> Tuple[np.ndarray, np.ndarray]:
    """xi 에 대한 피적분 가우스 곱의 중심과 공분산"""
    first = covariance(k, s - t)
    second = covariance(k, T - s)
    m1 = first.expB @ x
    E = second.expB
    eye = np.eye(k.d)
    # 정밀도 행렬은 모두 Cholesky 인자로 풀어서 구성
    P2E = cho_solve((second.chol, True), E)
    precision = cho_solve((first.chol, True), eye) + E.T @ P2E
    factor = cho_factor(0.5 * (precision + precision.T), lower=True)
    cov = cho_solve(factor, eye)
    rhs = cho_solve((first.chol, True), m1) + E.T @ cho_solve((second.chol, True), y)
    center = cho_solve(factor, rhs)
    return center, 0.5 * (cov + cov.T)


def tensor_gauss_legendre(lo: np.ndarray, hi: np.ndarray, panels: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = leggauss(10)
    axes_nodes, axes_weights = [], []
    for a, b in zip(lo, hi):
        edges = np.linspace(a, b, panels + 1)
        half = 0.5 * np.diff(edges)
        axes_nodes.append((edges[:-1, None] + half[:, None] * (nodes[None, :] + 1.0)).ravel())
        axes_weights.append((half[:, None] * weights[None, :]).ravel())
    mesh = np.meshgrid(*axes_nodes, indexing="ij")
    wmesh = np.meshgrid(*axes_weights, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1)
    w = np.prod(np.stack([m.ravel() for m in wmesh], axis=-1), axis=-1)
    return points, w


def ck_residual(k: GaussianKernel, t: float, x, s: float, T: float, y, tol: float = 1e-13) -> ChapmanKolmogorovResult:
    """|int Gamma_0(t,x;s,xi) Gamma_0(s,xi;T,y) dxi - Gamma_0(t,x;T,y)|"""
    if not (t < s < T):
        raise KernelError(f"t < s < T 이어야 합니다: t={t}, s={s}, T={T}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    center, cov = _posterior(k, t, x, s, T, y)
    half = TRUNCATION_SIGMAS * np.sqrt(np.diag(cov))
    lo, hi = center - half, center + half

    direct = float(density(k, t, x, T, y))
    max_panels = {1: 64, 2: 16, 3: 4}.get(k.d, 2)
    panels = 1
    previous = None
    integral = 0.0
    while panels <= max_panels:
        nodes, weights = tensor_gauss_legendre(lo, hi, panels)
        integrand = np.exp(log_density(k, t, x, s, nodes) + log_density(k, s, nodes, T, y))
        integral = float(np.sum(integrand * weights))
        if previous is not None and abs(integral - previous) <= tol * max(abs(integral), 1e-300):
            break
        previous = integral
        panels *= 2
    panels = min(panels, max_panels)

    tail_bound = abs(integral) * k.d * float(erfc(TRUNCATION_SIGMAS / np.sqrt(2.0)))
    return ChapmanKolmogorovResult(
        residual=abs(integral - direct), integral=integral, direct=direct, tail_bound=tail_bound, panels=panels,
    )


def normalization(k: GaussianKernel, t: float, x, T: float, panels: int = 4) -> float:
    """int Gamma_0(t, x; T, y) dy, 백색화 좌표 [-8, 8]^d 텐서 구적"""
    cov = covariance(k, T - t)
    x = np.asarray(x, dtype=float)
    w, weights = tensor_gauss_legendre(np.full(k.d, -TRUNCATION_SIGMAS), np.full(k.d, TRUNCATION_SIGMAS), panels)
    nodes = cov.expB @ x + w @ cov.chol.T
    jacobian = float(np.prod(np.diag(cov.chol)))
    return jacobian * float(np.sum(density(k, t, x, T, nodes) * weights))


def pde_residual(k: GaussianKernel, u: Callable[[float, np.ndarray], float], z, h: float) -> float:
    """중심차분으로 L_0 u 를 z = (t, x) 에서 계산"""
    if not h > 0:
        raise KernelError(f"차분 간격은 양수여야 합니다: h={h}")
    t = float(z.t)
    x = np.asarray(z.x, dtype=float)
    d, m0 = k.d, k.m0

    def value(tt, xx):
        try:
            out = float(np.asarray(u(tt, xx)))
        except (KernelError, ValueError) as e:
            raise KernelError(f"차분 스텐실이 u 의 정의역을 벗어납니다: {e}")
        if not np.isfinite(out):
            raise KernelError(f"차분 스텐실이 u 의 정의역을 벗어납니다 (t={tt}, x={xx})")
        return out

    center = value(t, x)
    result = (value(t + h, x) - value(t - h, x)) / (2.0 * h)
    drift = k.B.entries @ x
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        plus = value(t, x + e)
        minus = value(t, x - e)
        result += drift[i] * (plus - minus) / (2.0 * h)
        if i < m0:
            result += 0.5 * (plus - 2.0 * center + minus) / (h * h)
    return result
