import struct
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

# 바이너리 형식: 매직, 차원 d, 시간 수, 축별 노드 수, 축별 (min, max), 시간들, 값 (row-major float64 little-endian)
BINARY_MAGIC = b"KGS1"


@dataclass(frozen=True)
class Grid:
    """텐서 격자와 시간 구간 [t_start, t_end], 시간 간격 수 n_steps"""
    bounds: Tuple[Tuple[float, float], ...]
    counts: Tuple[int, ...]
    t_start: float = 0.0
    t_end: float = 1.0
    n_steps: int = 1

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        counts = tuple(int(n) for n in self.counts)
        if len(bounds) != len(counts):
            raise ValueError("bounds 와 counts 의 차원이 다릅니다")
        if any(n < 3 for n in counts):
            raise ValueError(f"축마다 노드가 3 개 이상 필요합니다: {counts}")
        if any(hi <= lo for lo, hi in bounds):
            raise ValueError(f"격자 구간이 비어 있습니다: {bounds}")
        if self.n_steps < 1:
            raise ValueError(f"시간 간격 수는 1 이상이어야 합니다: {self.n_steps}")
        if self.t_end < self.t_start:
            raise ValueError("t_end 는 t_start 보다 작을 수 없습니다")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "counts", counts)

    @property
    def d(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.counts

    @property
    def axes(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.linspace(lo, hi, n) for (lo, hi), n in zip(self.bounds, self.counts))

    @property
    def spacings(self) -> np.ndarray:
        return np.array([(hi - lo) / (n - 1) for (lo, hi), n in zip(self.bounds, self.counts)])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_steps + 1)

    def points(self) -> np.ndarray:
        """(N, d) 노드 좌표, ij 순서"""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def sample(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """공간 함수 fn(points) 를 격자 모양 배열로"""
        return np.asarray(fn(self.points()), dtype=float).reshape(self.shape)

    def with_steps(self, n_steps: int) -> "Grid":
        return replace(self, n_steps=int(n_steps))

    def refined(self) -> "Grid":
        """간격을 절반으로 (시간 간격 수는 두 배)"""
        return replace(
            self,
            counts=tuple(2 * n - 1 for n in self.counts),
            n_steps=2 * self.n_steps,
        )

    def contains(self, lo: np.ndarray, hi: np.ndarray) -> bool:
        return all(b[0] <= l and h <= b[1] for b, l, h in zip(self.bounds, lo, hi))


@dataclass
class GridSolution:
    """격자 위의 해 u(t_k, x_nodes); values 의 첫 축은 시간 (오름차순)"""
    values: np.ndarray
    grid: Grid
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        expected = (self.grid.n_steps + 1,) + self.grid.shape
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} 가 격자 {expected} 와 다릅니다")

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[[float, np.ndarray], np.ndarray], **metadata) -> "GridSolution":
        """fn(t, points) 를 모든 시간 단계에서 샘플링"""
        points = grid.points()
        values = np.stack([np.asarray(fn(float(t), points), dtype=float).reshape(grid.shape) for t in grid.times])
        return cls(values=values, grid=grid, metadata=dict(metadata))

    def mass(self) -> np.ndarray:
        """시간 단계별 리만 합 질량"""
        axes = tuple(range(1, self.values.ndim))
        return self.values.sum(axis=axes) * self.grid.cell_volume

    def time_index(self, t: float, atol: float = 1e-12) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > atol * max(1.0, abs(t)):
            raise ValueError(f"t={t} 는 격자 시간 단계가 아닙니다")
        return k

    def to_frame(self) -> pd.DataFrame:
        """긴 형식 (t, x1..xd, u)"""
        points = self.grid.points()
        n_nodes = len(points)
        frame = pd.DataFrame({"t": np.repeat(self.times, n_nodes)})
        tiled = np.tile(points, (len(self.times), 1))
        for j in range(self.grid.d):
            frame[f"x{j + 1}"] = tiled[:, j]
        frame["u"] = self.values.reshape(-1)
        return frame

    def to_bytes(self) -> bytes:
        g = self.grid
        header = BINARY_MAGIC + struct.pack("<II", g.d, len(self.times))
        header += struct.pack(f"<{g.d}I", *g.counts)
        header += struct.pack(f"<{2 * g.d}d", *(v for b in g.bounds for v in b))
        body = self.times.astype("<f8").tobytes() + self.values.astype("<f8").tobytes(order="C")
        return header + body

    @classmethod
    def from_bytes(cls, payload: bytes) -> "GridSolution":
        # 선행 '#' 주석 줄은 건너뜀
        while payload.startswith(b"#"):
            payload = payload[payload.index(b"\n") + 1:]
        if payload[:4] != BINARY_MAGIC:
            raise ValueError("GridSolution 바이너리 형식이 아닙니다")
        offset = 4
        d, n_times = struct.unpack_from("<II", payload, offset)
        offset += 8
        counts = struct.unpack_from(f"<{d}I", payload, offset)
        offset += 4 * d
        flat = struct.unpack_from(f"<{2 * d}d", payload, offset)
        offset += 16 * d
        times = np.frombuffer(payload, dtype="<f8", count=n_times, offset=offset)
        offset += 8 * n_times
        values = np.frombuffer(payload, dtype="<f8", count=n_times * int(np.prod(counts)), offset=offset)
        grid = Grid(
            bounds=tuple((flat[2 * j], flat[2 * j + 1]) for j in range(d)),
            counts=counts,
            t_start=float(times[0]),
            t_end=float(times[-1]),
            n_steps=n_times - 1,
        )
        return cls(values=values.reshape((n_times,) + tuple(counts)).astype(float), grid=grid)


def box_grid(
        extent: Sequence[float], counts: Sequence[int], center: Optional[Sequence[float]] = None, **time
) -> Grid:
    """center 주변 대칭 상자 격자"""
    center = np.zeros(len(counts)) if center is None else np.asarray(center, dtype=float)
    extent = np.broadcast_to(np.asarray(extent, dtype=float), center.shape)
    bounds = tuple((float(c - e), float(c + e)) for c, e in zip(center, extent))
    return Grid(bounds=bounds, counts=tuple(counts), **time)
