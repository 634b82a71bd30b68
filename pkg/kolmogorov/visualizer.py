from io import BytesIO
from typing import Dict, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402

from kolmogorov.grid import GridSolution  # noqa: E402


class GridVisualizer:
    """격자 해의 단면을 SVG 히트맵으로 그림"""

    def __init__(self, solution: GridSolution):
        self.solution = solution
        self._setup_style()

    def _setup_style(self):
        """시각화 스타일 설정"""
        sns.set_theme(style="white")
        plt.rcParams["axes.unicode_minus"] = False
        # SVG 출력이 실행마다 같도록 고정
        plt.rcParams["svg.hashsalt"] = "kolmogorov"
        plt.rcParams["svg.fonttype"] = "none"

    def generate_results(self, times: Optional[Sequence[float]] = None, axes: Tuple[int, int] = (0, 1)) -> Dict[str, str]:
        """시각별 히트맵 SVG 문자열 (기본: 처음과 마지막 시각)"""
        times = times if times is not None else (self.solution.times[0], self.solution.times[-1])
        return {f"t={float(t):.6g}": self.heatmap_svg(float(t), axes) for t in times}

    def heatmap_svg(self, t: float, axes: Tuple[int, int] = (0, 1)) -> str:
        frame, labels = self._slice(t, axes)
        fig, ax = plt.subplots(figsize=(7, 5))
        sns.heatmap(frame, ax=ax, cmap="viridis", xticklabels=False, yticklabels=False, cbar_kws={"label": "u"})
        ax.invert_yaxis()
        ax.set_xlabel(labels[1])
        ax.set_ylabel(labels[0])
        ax.set_title(f"u(t={t:.4g}, .)")
        svg = self._fig_to_svg(fig)
        plt.close(fig)
        return svg

    def _slice(self, t: float, axes: Tuple[int, int]) -> Tuple[pd.DataFrame, Tuple[str, str]]:
        """두 축 단면 (나머지 축은 가운데 노드); d = 1 이면 (t, x1) 평면"""
        grid = self.solution.grid
        if grid.d == 1:
            values = self.solution.values
            frame = pd.DataFrame(values.T, index=np.round(grid.axes[0], 6), columns=np.round(self.solution.times, 6))
            return frame, ("x1", "t")

        first, second = axes
        if first == second or not (0 <= first < grid.d and 0 <= second < grid.d):
            raise ValueError(f"단면 축이 잘못되었습니다: {axes}")
        k = self.solution.time_index(t, atol=0.5 * grid.dt / max(1.0, abs(t)) if grid.dt > 0 else 1e-12)
        index = [n // 2 for n in grid.counts]
        index[first] = slice(None)
        index[second] = slice(None)
        values = self.solution.values[k][tuple(index)]
        if first > second:
            values = values.T
        frame = pd.DataFrame(values, index=np.round(grid.axes[first], 6), columns=np.round(grid.axes[second], 6))
        return frame, (f"x{first + 1}", f"x{second + 1}")

    def _fig_to_svg(self, fig: plt.Figure) -> str:
        """matplotlib 그림을 SVG 문자열로 변환"""
        buf = BytesIO()
        fig.savefig(buf, format="svg", bbox_inches="tight", metadata={"Date": None})
        buf.seek(0)
        return buf.getvalue().decode("utf-8")
