import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

from kolmogorov.coeff_expr import OperatorSpec, ValidationBox
from kolmogorov.group_structure import DilationFamily
from kolmogorov.kernel import GaussianKernel, KernelError, covariance

logger = logging.getLogger(__name__)

# 표본 블록 크기: 블록 번호가 난수 스트림의 카운터가 됨
BLOCK_SIZE = 4096
PROBE_STEP = 1e-3
PROBE_TOLERANCE = 1e-9


class SimulationError(ValueError):
    """표본 생성 오류"""


@dataclass
class SampleBatch:
    """종단 상태 표본 (n, d)"""
    points: np.ndarray
    seed: int
    meta: Dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.points)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.points, columns=[f"x{j + 1}" for j in range(self.points.shape[1])])


def _block_generator(seed: int, block: int) -> np.random.Generator:
    """(seed, 블록 번호) 로 결정되는 Philox 카운터 기반 스트림"""
    bit_generator = np.random.Philox(key=int(seed), counter=[0, 0, 0, int(block)])
    return np.random.Generator(bit_generator)


def _blocks(n: int):
    for block, start in enumerate(range(0, n, BLOCK_SIZE)):
        yield block, start, min(BLOCK_SIZE, n - start)


def _check_counts(n: int, steps: Optional[int] = None):
    if n < 1:
        raise SimulationError(f"표본 수는 1 이상이어야 합니다: n={n}")
    if steps is not None and steps < 1:
        raise SimulationError(f"시간 단계 수는 1 이상이어야 합니다: steps={steps}")


def sample_exact(
        k: GaussianKernel, t: float, x, T: float, n: int, seed: int, threads: int = 1
) -> SampleBatch:
    """X_T ~ N(e^{(T-t)B} x, C(T-t)) 정확 표본"""
    _check_counts(n)
    if T < t:
        raise SimulationError(f"t <= T 이어야 합니다: t={t}, T={T}")
    x = np.asarray(x, dtype=float)
    meta = {"t": t, "x": x.tolist(), "T": T, "scheme": "exact", "steps": 0}
    if T == t:
        return SampleBatch(points=np.tile(x, (n, 1)), seed=seed, meta=meta)

    try:
        cov = covariance(k, T - t)
    except KernelError as e:
        raise SimulationError(f"공분산 분해 실패: {e}")
    mean = cov.expB @ x

    def draw(block: int, size: int) -> np.ndarray:
        xi = _block_generator(seed, block).standard_normal((size, k.d))
        return mean + xi @ cov.chol.T

    parts = Parallel(n_jobs=threads, prefer="threads")(
        delayed(draw)(block, size) for block, _, size in _blocks(n)
    )
    return SampleBatch(points=np.concatenate(parts), seed=seed, meta=meta)


def _probe_restrictions(spec: OperatorSpec, t: float, T: float, box: ValidationBox, n: int = 5):
    """확산 좌표 방향 독립성과 c = 0 을 격자 차분으로 확인"""
    axes = [np.linspace(lo, hi, n) for lo, hi in box.ranges(spec.d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1)
    for s in np.linspace(t, T, 3):
        a, drift, c = spec.coeffs.evaluate(s, points)
        if np.max(np.abs(c)) > PROBE_TOLERANCE:
            raise SimulationError("c != 0: 밀도 해석을 위해 c = 0 이어야 합니다")
        scale = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(drift))) if drift.size else 0.0)
        for j in range(spec.m0):
            shifted = points.copy()
            shifted[:, j] += PROBE_STEP
            a2, drift2, _ = spec.coeffs.evaluate(s, shifted)
            change = max(float(np.max(np.abs(a2 - a))), float(np.max(np.abs(drift2 - drift))))
            if change > PROBE_TOLERANCE * scale:
                raise SimulationError(
                    f"계수가 확산 좌표 x{j + 1} 에 의존합니다 (diffused coordinate dependence): 변화량 {change:.3e}"
                )


def euler_maruyama(
        spec: OperatorSpec,
        t: float,
        x,
        T: float,
        steps: int,
        n: int,
        seed: int,
        threads: int = 1,
        probe_box: Optional[ValidationBox] = None,
) -> SampleBatch:
    """X_{k+1} = X_k + (B X_k + a_i) dt + sigma~ dW, sigma~ sigma~^T = 2a (첫 m0 좌표)"""
    _check_counts(n, steps)
    if T <= t:
        raise SimulationError(f"t < T 이어야 합니다: t={t}, T={T}")
    _probe_restrictions(spec, t, T, probe_box or ValidationBox(t_range=(t, T)))

    x = np.asarray(x, dtype=float)
    dt = (T - t) / steps
    sqrt_dt = np.sqrt(dt)
    B = spec.B.entries
    m0 = spec.m0

    def simulate_block(block: int, size: int) -> np.ndarray:
        rng = _block_generator(seed, block)
        X = np.tile(x, (size, 1))
        for step in range(steps):
            tk = t + step * dt
            a, drift, _ = spec.coeffs.evaluate(tk, X)
            root = np.linalg.cholesky(2.0 * a)
            dW = rng.standard_normal((size, m0)) * sqrt_dt
            increment = (X @ B.T) * dt
            increment[:, :m0] += drift * dt + np.einsum("nij,nj->ni", root, dW)
            X = X + increment
        return X

    parts = Parallel(n_jobs=threads, prefer="threads")(
        delayed(simulate_block)(block, size) for block, _, size in _blocks(n)
    )
    meta = {"t": t, "x": x.tolist(), "T": T, "scheme": "euler", "steps": steps}
    return SampleBatch(points=np.concatenate(parts), seed=seed, meta=meta)


def default_bandwidth(n: int, fam: DilationFamily) -> float:
    """h = n^{-1/(Q+4)}"""
    return float(n) ** (-1.0 / (fam.Q + 4))


def kde_density(batch: SampleBatch, fam: DilationFamily, h: Optional[float], y) -> np.ndarray:
    """블록 i 에서 대역폭 h^{2i+1} 인 곱 가우스 KDE"""
    if batch.n == 0:
        raise SimulationError("빈 표본으로 KDE 를 계산할 수 없습니다")
    h = default_bandwidth(batch.n, fam) if h is None else h
    if not h > 0:
        raise SimulationError(f"대역폭은 양수여야 합니다: h={h}")
    widths = float(h) ** fam.exponents
    y = np.atleast_2d(np.asarray(y, dtype=float))
    norm = -0.5 * len(widths) * np.log(2.0 * np.pi) - np.sum(np.log(widths))

    total = np.zeros(len(y))
    chunk = max(1, int(4e6 // max(len(y), 1)))
    for start in range(0, batch.n, chunk):
        diff = (y[:, None, :] - batch.points[None, start:start + chunk, :]) / widths
        total += np.exp(norm - 0.5 * np.sum(diff * diff, axis=-1)).sum(axis=1)
    return total / batch.n


def mahalanobis_mean(batch: SampleBatch, k: GaussianKernel) -> float:
    """||chol^{-1}(X - mean)||^2 의 표본 평균 (기대값 d)"""
    t, T = batch.meta["t"], batch.meta["T"]
    cov = covariance(k, T - t)
    centered = batch.points - cov.expB @ np.asarray(batch.meta["x"], dtype=float)
    w = solve_triangular(cov.chol, centered.T, lower=True)
    return float(np.mean(np.sum(w * w, axis=0)))


def energy_distance(a: np.ndarray, b: np.ndarray) -> float:
    """두 표본 에너지 통계량"""
    ab = cdist(a, b).mean()
    aa = cdist(a, a).mean()
    bb = cdist(b, b).mean()
    return float(2.0 * ab - aa - bb)


def energy_test(a: np.ndarray, b: np.ndarray, permutations: int = 199, seed: int = 0) -> Dict:
    """순열 영분포로 보정한 에너지 두 표본 검정"""
    pooled = np.concatenate([a, b])
    distances = cdist(pooled, pooled)
    na = len(a)

    def statistic(index: np.ndarray) -> float:
        ia, ib = index[:na], index[na:]
        return float(
            2.0 * distances[np.ix_(ia, ib)].mean()
            - distances[np.ix_(ia, ia)].mean()
            - distances[np.ix_(ib, ib)].mean()
        )

    observed = statistic(np.arange(len(pooled)))
    rng = np.random.default_rng(seed)
    null = np.array([statistic(rng.permutation(len(pooled))) for _ in range(permutations)])
    p_value = float((1 + np.sum(null >= observed)) / (permutations + 1))
    return {"statistic": observed, "p_value": p_value, "threshold": float(np.quantile(null, 0.99))}
