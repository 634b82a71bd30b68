import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from kolmogorov.coeff_expr import CoefficientModel, OperatorSpec
from kolmogorov.group_structure import DilationFamily, DriftMatrix, GroupElement, left_translate, validate_blocks
from kolmogorov.kernel import GaussianKernel, log_density

logger = logging.getLogger(__name__)


class ScalingError(ValueError):
    """스케일링 / 평행이동 변환 오류"""


@dataclass(frozen=True)
class ComposedCoefficients:
    """기준 계수 계산기를 좌표 변환과 스칼라 배율로 감싼 계산기"""
    base: CoefficientModel
    transform: Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]
    a_factor: float = 1.0
    drift_factor: float = 1.0
    c_factor: float = 1.0

    @property
    def m0(self) -> int:
        return self.base.m0

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def bound_m(self) -> float:
        return self.base.bound_m

    def evaluate(self, t, x):
        tt, xx = self.transform(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        a, drift, c = self.base.evaluate(tt, xx)
        return self.a_factor * a, self.drift_factor * drift, self.c_factor * c


@dataclass(frozen=True)
class ScaledOperator:
    """L^(lambda): 계수를 delta_lambda 로 dilation 한 연산자"""
    base: OperatorSpec
    lam: float
    B_lam: DriftMatrix
    coeffs: ComposedCoefficients

    @property
    def spec(self) -> OperatorSpec:
        return OperatorSpec(blocks=self.base.blocks, B=self.B_lam, coeffs=self.coeffs, mu=self.base.mu)


def scaled_drift_matrix(B: DriftMatrix, lam: float) -> DriftMatrix:
    """B^(lambda) = lambda^2 D(1/lambda) B D(lambda); (i,j) 블록은 lambda^{2(j-i+1)} 배"""
    fam = DilationFamily(B.structure)
    entries = lam * lam * (B.entries * fam.diagonal(lam)[None, :] / fam.diagonal(lam)[:, None])
    # 부대각 블록은 정확히 보존
    for i in range(1, len(B.structure.m)):
        rows, cols = B.structure.block_slice(i), B.structure.block_slice(i - 1)
        entries[rows, cols] = B.entries[rows, cols]
    return validate_blocks(entries, B.structure)


def scale_operator(spec: OperatorSpec, lam: float) -> ScaledOperator:
    """A^(l) = A o delta_l, a^(l) = l a o delta_l, c^(l) = l^2 c o delta_l"""
    if not 0.0 < lam <= 1.0:
        raise ScalingError(f"lambda 는 (0, 1] 범위여야 합니다: lambda={lam}")
    fam = DilationFamily(spec.blocks)
    scale = fam.diagonal(lam)

    def dilation(t, x):
        return lam * lam * t, x * scale

    coeffs = ComposedCoefficients(
        base=spec.coeffs, transform=dilation, a_factor=1.0, drift_factor=lam, c_factor=lam * lam,
    )
    return ScaledOperator(base=spec, lam=float(lam), B_lam=scaled_drift_matrix(spec.B, lam), coeffs=coeffs)


def translate_operator(spec: OperatorSpec, zeta: GroupElement) -> OperatorSpec:
    """L^(zeta) = L o ell_zeta: 계수를 좌평행이동과 합성"""
    if zeta.x.shape != (spec.d,):
        raise ScalingError(f"zeta 의 공간 차원 {zeta.x.shape} 가 d={spec.d} 와 다릅니다")
    B = spec.B

    def translation(t, x):
        return left_translate(zeta, t, x, B)

    coeffs = ComposedCoefficients(base=spec.coeffs, transform=translation)
    return OperatorSpec(blocks=spec.blocks, B=spec.B, coeffs=coeffs, mu=spec.mu)


@dataclass
class ScalingCheck:
    lam: float
    max_rel_error: float
    applicable: bool
    samples: int
    reason: str = ""


def _sample_pairs(k: GaussianKernel, samples: int, seed: int):
    """Gamma_0 이 무시할 만큼 작지 않은 (z, zeta) 표본"""
    rng = np.random.default_rng(seed)
    t = rng.uniform(-1.0, 1.0, samples)
    tau = rng.uniform(0.1, 2.0, samples)
    x = rng.normal(size=(samples, k.d))
    y = np.empty_like(x)
    for n in range(samples):
        cov = k.covariance(float(tau[n]))
        y[n] = cov.expB @ x[n] + cov.chol @ rng.normal(size=k.d)
    return t, tau, x, y


def _relative_errors(k_left: GaussianKernel, k_right: GaussianKernel, lam: float, samples: int, seed: int) -> float:
    fam = k_left.fam
    Q = fam.Q
    scale = fam.diagonal(lam)
    t, tau, x, y = _sample_pairs(k_right, samples, seed)
    worst = 0.0
    for n in range(samples):
        T = t[n] + tau[n]
        # lambda^Q Gamma(delta_l z; delta_l zeta) / Gamma'(z; zeta)
        lhs = Q * np.log(lam) + log_density(k_left, lam * lam * t[n], scale * x[n], lam * lam * T, scale * y[n])
        rhs = log_density(k_right, t[n], x[n], T, y[n])
        worst = max(worst, abs(float(np.expm1(lhs - rhs))))
    return worst


def scaled_kernel_check(k: GaussianKernel, lam: float, samples: int = 100, seed: int = 0) -> ScalingCheck:
    """동차 B 에 대해 lambda^Q Gamma_0(delta_l z; delta_l zeta) = Gamma_0(z; zeta) 확인"""
    if not lam > 0:
        raise ScalingError(f"lambda 는 양수여야 합니다: lambda={lam}")
    if not k.B.homogeneous:
        logger.info("비동차 B: 자기 자신과의 스케일링 항등식은 적용되지 않습니다")
        return ScalingCheck(
            lam=lam, max_rel_error=float("nan"), applicable=False, samples=0,
            reason="non-homogeneous B (inapplicable)",
        )
    error = _relative_errors(k, k, lam, samples, seed)
    return ScalingCheck(lam=lam, max_rel_error=error, applicable=True, samples=samples)


def generalized_scaled_kernel_check(
        k: GaussianKernel, lam: float, samples: int = 100, seed: int = 0
) -> ScalingCheck:
    """임의의 B 에 대해 lambda^Q Gamma_0^B(delta_l z; delta_l zeta) = Gamma_0^{B^(l)}(z; zeta) 확인"""
    if not lam > 0:
        raise ScalingError(f"lambda 는 양수여야 합니다: lambda={lam}")
    scaled = GaussianKernel(scaled_drift_matrix(k.B, lam))
    error = _relative_errors(k, scaled, lam, samples, seed)
    return ScalingCheck(lam=lam, max_rel_error=error, applicable=True, samples=samples)


def sample_coefficients(
        coeffs: CoefficientModel, points: np.ndarray, t: float, seed: Optional[int] = None
) -> dict:
    """JSON 출력용 계수 표본"""
    a, drift, c = coeffs.evaluate(t, points)
    return {
        "t": float(t),
        "x": np.asarray(points).tolist(),
        "a": a.tolist(),
        "drift": drift.tolist(),
        "c": np.broadcast_to(c, points.shape[:-1]).tolist(),
    }
