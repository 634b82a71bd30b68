import logging
from dataclasses import dataclass, field
from typing import Sequence, Tuple, Union

import numpy as np
from scipy.linalg import expm

logger = logging.getLogger(__name__)

# B_i 의 최소 특이값 / 최대 특이값 하한
RANK_TOLERANCE = 1e-10
# C(1) 최소 고유값 / 최대 고유값 하한
GRAMIAN_TOLERANCE = 1e-12


class BlockStructureError(ValueError):
    """블록 구조 또는 drift 행렬이 조건을 만족하지 않을 때"""


@dataclass(frozen=True)
class BlockStructure:
    """블록 크기 m_0 >= m_1 >= ... >= m_nu >= 1"""
    m: Tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(v) for v in self.m)
        if not sizes:
            raise BlockStructureError("블록 크기 목록이 비어 있습니다")
        if any(v < 1 for v in sizes):
            raise BlockStructureError(f"블록 크기는 1 이상이어야 합니다: {sizes}")
        if any(a < b for a, b in zip(sizes, sizes[1:])):
            raise BlockStructureError(f"블록 크기가 단조 감소하지 않습니다 (non-monotone): {sizes}")
        object.__setattr__(self, "m", sizes)

    @property
    def d(self) -> int:
        return sum(self.m)

    @property
    def nu(self) -> int:
        return len(self.m) - 1

    @property
    def m0(self) -> int:
        return self.m[0]

    @property
    def offsets(self) -> Tuple[int, ...]:
        """각 블록의 시작 좌표"""
        return tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.m)[:-1]]))

    def block_slice(self, i: int) -> slice:
        start = self.offsets[i]
        return slice(start, start + self.m[i])

    def block_index(self) -> np.ndarray:
        """좌표별 블록 번호"""
        return np.repeat(np.arange(len(self.m)), self.m)


@dataclass(frozen=True)
class DriftMatrix:
    """Assumption 블록 형태를 만족하는 상수 drift 행렬 B"""
    entries: np.ndarray
    structure: BlockStructure
    homogeneous: bool = False

    @property
    def d(self) -> int:
        return self.structure.d

    @property
    def m0(self) -> int:
        return self.structure.m0

    def block(self, i: int, j: int) -> np.ndarray:
        """(i, j) 블록 (0 부터 시작)"""
        s = self.structure
        return self.entries[s.block_slice(i), s.block_slice(j)]

    def exp(self, t: float) -> np.ndarray:
        """e^{tB}"""
        return expm(float(t) * self.entries)


@dataclass(frozen=True)
class GroupElement:
    """시공간 군의 점 z = (t, x)"""
    t: float
    x: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))

    @classmethod
    def identity(cls, d: int) -> "GroupElement":
        return cls(0.0, np.zeros(d))

    def allclose(self, other: "GroupElement", atol: float = 1e-12) -> bool:
        return abs(self.t - other.t) <= atol and np.allclose(self.x, other.x, rtol=0.0, atol=atol)


@dataclass(frozen=True)
class DilationFamily:
    """내재적 dilation D(r), delta_r 과 동차 차원 Q"""
    structure: BlockStructure

    @property
    def Q(self) -> int:
        return homogeneous_dimension(self.structure.m)

    @property
    def exponents(self) -> np.ndarray:
        """좌표별 지수 2i+1"""
        return 2 * self.structure.block_index() + 1

    def diagonal(self, r: float) -> np.ndarray:
        return float(r) ** self.exponents

    def matrix(self, r: float) -> np.ndarray:
        return np.diag(self.diagonal(r))

    def jacobian(self, r: float) -> float:
        return float(np.prod(self.diagonal(r)))


@dataclass(frozen=True)
class Cylinder:
    """내재적 원기둥 R_r(z0) (forward=True 이면 R_r^+)"""
    center: GroupElement
    radius: float
    forward: bool = False


DriftLike = Union[DriftMatrix, np.ndarray]


def _entries(B: DriftLike) -> np.ndarray:
    return B.entries if isinstance(B, DriftMatrix) else np.asarray(B, dtype=float)


def validate_blocks(B: Union[np.ndarray, Sequence[Sequence[float]]], m: Sequence[int]) -> DriftMatrix:
    """B 가 블록 형태인지 검증하고 DriftMatrix 반환 (homogeneous 플래그 포함)"""
    structure = m if isinstance(m, BlockStructure) else BlockStructure(tuple(m))
    entries = np.array(B, dtype=float)
    d = structure.d

    if entries.ndim != 2 or entries.shape != (d, d):
        raise BlockStructureError(f"B 는 {d}x{d} 행렬이어야 합니다: shape={entries.shape}")
    if not np.all(np.isfinite(entries)):
        raise BlockStructureError("B 에 유한하지 않은 값이 있습니다")

    n_blocks = len(structure.m)
    homogeneous = True
    for i in range(n_blocks):
        for j in range(n_blocks):
            blk = entries[structure.block_slice(i), structure.block_slice(j)]
            if i == j + 1:
                # 부대각 블록 B_i 는 full rank m_i
                s = np.linalg.svd(blk, compute_uv=False)
                rank = int(np.sum(s > RANK_TOLERANCE * s[0])) if s[0] > 0 else 0
                if rank < structure.m[i]:
                    raise BlockStructureError(
                        f"B_{i} 블록의 rank 가 부족합니다 (B_{i} rank deficient: {rank} < {structure.m[i]})"
                    )
            elif i > j + 1:
                if np.any(blk != 0.0):
                    raise BlockStructureError(
                        f"첫 부대각 아래 블록 ({i},{j}) 에 0 이 아닌 값이 있습니다"
                    )
            elif np.any(blk != 0.0):
                homogeneous = False

    entries.setflags(write=False)
    return DriftMatrix(entries=entries, structure=structure, homogeneous=homogeneous)


def homogeneous_dimension(m: Sequence[int]) -> int:
    """Q = m_0 + 3 m_1 + ... + (2 nu + 1) m_nu"""
    sizes = m.m if isinstance(m, BlockStructure) else BlockStructure(tuple(m)).m
    return int(sum((2 * i + 1) * mi for i, mi in enumerate(sizes)))


def group_compose(a: GroupElement, b: GroupElement, B: DriftLike) -> GroupElement:
    """(tau, xi) o (t, x) = (t + tau, x + e^{tB} xi)"""
    E = expm(b.t * _entries(B))
    return GroupElement(a.t + b.t, b.x + E @ a.x)


def group_inverse(z: GroupElement, B: DriftLike) -> GroupElement:
    E = expm(-z.t * _entries(B))
    return GroupElement(-z.t, -(E @ z.x))


def left_translate(zeta: GroupElement, t, x: np.ndarray, B: DriftLike) -> Tuple[np.ndarray, np.ndarray]:
    """배열 버전의 ell_zeta(t, x); t 는 스칼라 또는 x 의 앞쪽 shape 와 같은 배열"""
    entries = _entries(B)
    t_arr = np.asarray(t, dtype=float)
    x_arr = np.asarray(x, dtype=float)
    if t_arr.ndim == 0:
        shift = expm(float(t_arr) * entries) @ zeta.x
        return t_arr + zeta.t, x_arr + shift
    t_full = np.broadcast_to(t_arr, x_arr.shape[:-1])
    shift = np.empty(x_arr.shape)
    # 같은 시간끼리 e^{tB} 를 한 번만 계산
    for value in np.unique(t_full):
        mask = t_full == value
        shift[mask] = expm(float(value) * entries) @ zeta.x
    return t_full + zeta.t, x_arr + shift


def dilate(z: GroupElement, r: float, fam: DilationFamily) -> GroupElement:
    """delta_r(t, x) = (r^2 t, D(r) x)"""
    if r <= 0:
        raise ValueError(f"dilation 배율은 양수여야 합니다: r={r}")
    return GroupElement(r * r * z.t, fam.diagonal(r) * z.x)


def controllability_gramian(B: DriftLike, m0: int, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """증강 블록 행렬 지수로 C(t) 와 e^{tB} 를 계산 (Van Loan)"""
    entries = _entries(B)
    d = entries.shape[0]
    sigma = np.zeros((d, m0))
    sigma[:m0, :m0] = np.eye(m0)

    augmented = np.zeros((2 * d, 2 * d))
    augmented[:d, :d] = entries
    augmented[:d, d:] = sigma @ sigma.T
    augmented[d:, d:] = -entries.T
    F = expm(float(t) * augmented)

    expB = F[:d, :d]
    C = F[:d, d:] @ expB.T
    return 0.5 * (C + C.T), expB


def hypoellipticity_check(B: DriftLike, m0: int) -> bool:
    """rank[sigma, B sigma, ..., B^{d-1} sigma] = d 인지 확인"""
    entries = _entries(B)
    d = entries.shape[0]
    sigma = np.zeros((d, m0))
    sigma[:m0, :m0] = np.eye(m0)

    columns = [sigma]
    for _ in range(d - 1):
        columns.append(entries @ columns[-1])
    kalman = np.hstack(columns)
    by_rank = int(np.linalg.matrix_rank(kalman)) == d

    # C(1) 의 양의 정부호성으로 교차 확인
    C, _ = controllability_gramian(entries, m0, 1.0)
    eig = np.linalg.eigvalsh(C)
    by_gramian = eig[0] > GRAMIAN_TOLERANCE * max(eig[-1], 1.0)
    if by_rank != by_gramian:
        logger.warning(
            "rank 조건과 C(1) 양의 정부호성이 일치하지 않습니다 (rank=%s, min eig=%.3e)",
            by_rank, eig[0],
        )
    return by_rank


def cylinder_mask(
        cyl: Cylinder, t: float, x: np.ndarray, B: DriftLike, fam: DilationFamily
) -> np.ndarray:
    """시간 t 에서 공간 점들 x (..., d) 의 원기둥 포함 여부"""
    r = cyl.radius
    s = (float(t) - cyl.center.t) / (r * r)
    if cyl.forward:
        inside_time = 0.0 < s < 1.0
    else:
        inside_time = abs(s) < 1.0
    x = np.asarray(x, dtype=float)
    if not inside_time:
        return np.zeros(x.shape[:-1], dtype=bool)
    # z0^{-1} o z = (t - t0, x - e^{(t - t0)B} x0)
    shifted = x - expm((float(t) - cyl.center.t) * _entries(B)) @ cyl.center.x
    w = shifted / fam.diagonal(r)
    return np.linalg.norm(w, axis=-1) < 1.0


def cylinder_contains(c: Cylinder, z: GroupElement, B: DriftLike, fam: DilationFamily) -> bool:
    """delta_{1/r}(z0^{-1} o z) 가 R_1 (또는 R_1^+) 에 속하는지"""
    if c.radius <= 0:
        raise ValueError(f"원기둥 반지름은 양수여야 합니다: r={c.radius}")
    w = dilate(group_compose(group_inverse(c.center, B), z, B), 1.0 / c.radius, fam)
    if c.forward:
        inside_time = 0.0 < w.t < 1.0
    else:
        inside_time = abs(w.t) < 1.0
    return bool(inside_time and np.linalg.norm(w.x) < 1.0)


def cylinder_bounding_box(
        cyl: Cylinder, B: DriftLike, fam: DilationFamily, samples: int = 65
) -> Tuple[Tuple[float, float], np.ndarray, np.ndarray]:
    """원기둥을 감싸는 시간 구간과 공간 상자 (lo, hi)"""
    r = cyl.radius
    lo_s = 0.0 if cyl.forward else -1.0
    half = fam.diagonal(r)
    lows, highs = [], []
    for s in np.linspace(lo_s, 1.0, samples):
        center = expm(r * r * s * _entries(B)) @ cyl.center.x
        lows.append(center - half)
        highs.append(center + half)
    t_range = (cyl.center.t + r * r * lo_s, cyl.center.t + r * r)
    return t_range, np.min(lows, axis=0), np.max(highs, axis=0)
