import logging
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List

import numpy as np
import pandas as pd

from app.config import build_operator, validation_box
from app.outputs import OutputWriter, report_text
from app.schemas import DescribeSummary, ReportModel, RunConfig
from kolmogorov.coeff_expr import check_assumptions, parse_expr
from kolmogorov.fdsolver import (
    GridDensity,
    estimate_fundamental_solution,
    extrapolate_fundamental_solution,
    moser_check,
    solve_backward,
    with_cfl_steps,
)
from kolmogorov.grid import Grid, GridSolution
from kolmogorov.group_structure import GroupElement, homogeneous_dimension, hypoellipticity_check
from kolmogorov.kernel import (
    GaussianKernel,
    ck_residual,
    covariance,
    density,
    kernel_function,
    log_density,
    normalization,
    pde_residual,
)
from kolmogorov.scaling import generalized_scaled_kernel_check, scaled_kernel_check
from kolmogorov.simulate import euler_maruyama, kde_density, mahalanobis_mean, sample_exact
from kolmogorov.verify import (
    VerificationReport,
    decay_check,
    exponent_regression,
    fit_gaussian_bound,
    l2_norm_check,
    lambda_sweep,
    nash_constant,
    tail_mass_check,
)
from kolmogorov.visualizer import GridVisualizer

logger = logging.getLogger(__name__)


@dataclass
class TaskResult:
    name: str
    passed: bool = True
    payloads: List[Dict] = field(default_factory=list)


class TaskRunner:
    """설정 하나로 작업 하나를 실행하고 출력 파일을 작성"""

    def __init__(self, config: RunConfig, writer: OutputWriter, config_sha256: str, threads: int = 1):
        self.config = config
        self.task = config.task
        self.writer = writer
        self.config_sha256 = config_sha256
        self.threads = self.task.threads or threads
        self.spec = build_operator(config.operator)
        self.box = validation_box(config.operator)

    def run(self) -> TaskResult:
        handlers: Dict[str, Callable[[], TaskResult]] = {
            "describe": self._describe,
            "kernel-eval": self._kernel_eval,
            "kernel-ck": self._kernel_ck,
            "sample": self._sample,
            "solve": self._solve,
            "scale": self._scale,
            "verify-nash": self._verify_nash,
            "verify-bound": self._verify_bound,
            "verify-tail": self._verify_tail,
            "verify-decay": self._verify_decay,
            "moser": self._moser,
        }
        logger.info("작업 %s 실행 (threads=%d)", self.task.name, self.threads)
        try:
            result = handlers[self.task.name]()
        except Exception:
            self.writer.cleanup()
            raise
        if not result.passed:
            logger.warning("작업 %s: 검증 부등식이 성립하지 않습니다", self.task.name)
        return result

    # -----------------------------------------------------------------------
    # 공통
    # -----------------------------------------------------------------------

    @cached_property
    def kernel(self) -> GaussianKernel:
        return GaussianKernel(self.spec.B)

    def _points(self, values: List[float], label: str) -> np.ndarray:
        d = self.spec.d
        if not values or len(values) % d != 0:
            raise ValueError(f"{label} 는 d={d} 의 배수 개 값이어야 합니다: {len(values)} 개")
        return np.asarray(values, dtype=float).reshape(-1, d)

    def _point(self, values: List[float], label: str) -> np.ndarray:
        points = self._points(values, label)
        if len(points) != 1:
            raise ValueError(f"{label} 는 점 하나여야 합니다")
        return points[0]

    def _grid(self, t_start: float, t_end: float) -> Grid:
        task = self.task
        d = self.spec.d
        if len(task.bounds) != 2 * d or len(task.counts) != d:
            raise ValueError(f"격자 bounds 는 {2 * d} 개, counts 는 {d} 개 값이어야 합니다")
        bounds = tuple((task.bounds[2 * j], task.bounds[2 * j + 1]) for j in range(d))
        grid = Grid(bounds=bounds, counts=tuple(task.counts), t_start=t_start, t_end=t_end, n_steps=task.n_steps or 1)
        if task.n_steps is None:
            grid = with_cfl_steps(self.spec, grid, task.cfl_safety)
        return grid

    def _probe_lattice(self, center: np.ndarray) -> np.ndarray:
        axes = [np.linspace(c - self.task.probe_extent, c + self.task.probe_extent, self.task.probe_count) for c in center]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def _fundamental(self, grid: Grid, pole: np.ndarray, T: float) -> GridSolution:
        eps = self.task.eps
        if not eps:
            eps = [2.0 * float(np.max(grid.spacings))]
        if len(eps) == 1:
            return estimate_fundamental_solution(self.spec, T, pole, eps[0], grid)
        return extrapolate_fundamental_solution(self.spec, T, pole, eps, grid, threads=self.threads)

    def _emit_report(self, report: VerificationReport, stem: str) -> Dict:
        model = ReportModel(**report.to_dict(), config_sha256=self.config_sha256)
        payload = model.model_dump(by_alias=True)
        if self.writer.wants("json"):
            self.writer.write_json(f"{stem}.json", payload)
        if self.writer.wants("txt"):
            self.writer.write_text(f"{stem}.txt", report_text(report.estimate, payload))
        return payload

    def _emit_payload(self, payload: Dict, stem: str, title: str):
        if self.writer.wants("json"):
            self.writer.write_json(f"{stem}.json", payload)
        if self.writer.wants("txt"):
            self.writer.write_text(f"{stem}.txt", report_text(title, payload))

    def _emit_solution(self, solution: GridSolution, stem: str):
        if self.writer.wants("csv"):
            self.writer.write_frame(f"{stem}.csv", solution.to_frame())
        if self.writer.wants("bin"):
            self.writer.write_bytes(f"{stem}.bin", solution.to_bytes())
        if self.writer.wants("svg") and solution.grid.d >= 1:
            figures = GridVisualizer(solution).generate_results()
            for n, svg in enumerate(figures.values()):
                self.writer.write_svg(f"{stem}_{n}.svg", svg)

    # -----------------------------------------------------------------------
    # 작업
    # -----------------------------------------------------------------------

    def _describe(self) -> TaskResult:
        spec = self.spec
        report = check_assumptions(spec, self.box, n=self.config.operator.box_n, threads=self.threads)
        summary = DescribeSummary(
            d=spec.d,
            m=list(spec.blocks.m),
            Q=homogeneous_dimension(spec.blocks),
            homogeneous=spec.B.homogeneous,
            hypoelliptic=hypoellipticity_check(spec.B, spec.m0),
            mu_hat=report.mu_hat,
            bounds={
                "min_eig": report.min_eig,
                "max_eig": report.max_eig,
                "drift_sup": report.drift_sup,
                "c_sup": report.c_sup,
            },
            config_sha256=self.config_sha256,
        )
        payload = summary.model_dump()
        self._emit_payload(payload, "describe", "describe")
        return TaskResult(name="describe", payloads=[payload])

    def _kernel_eval(self) -> TaskResult:
        task = self.task
        k = self.kernel
        x = self._point(task.x, "x")
        ys = self._points(task.y, "y")
        values = log_density(k, task.t, x, task.T, ys)

        frame = pd.DataFrame(ys, columns=[f"y{j + 1}" for j in range(k.d)])
        frame["density"] = np.exp(values)
        frame["log_density"] = values
        if self.writer.wants("csv"):
            self.writer.write_frame("kernel.csv", frame)

        cov = covariance(k, task.T - task.t)
        payload = {
            "t": task.t, "x": x, "T": task.T,
            "mean": cov.expB @ x,
            "covariance": cov.C,
            "logdet": cov.logdet,
            "quadrature_gap": cov.quadrature_gap,
            "normalization": normalization(k, task.t, x, task.T),
        }
        if task.h is not None:
            u = kernel_function(k, task.T, ys[0])
            payload["pde_residual"] = pde_residual(k, u, GroupElement(task.t, x), task.h)
        self._emit_payload(payload, "kernel", "kernel-eval")
        return TaskResult(name="kernel-eval", payloads=[payload])

    def _kernel_ck(self) -> TaskResult:
        task = self.task
        k = self.kernel
        x = self._point(task.x, "x")
        y = self._point(task.y, "y")
        started = time.perf_counter()
        result = ck_residual(k, task.t, x, task.s, task.T, y)
        mass = normalization(k, task.t, x, task.T)
        relative = result.residual / result.direct if result.direct > 0 else float("inf")
        report = VerificationReport(
            estimate="chapman-kolmogorov",
            constants={"integral": result.integral, "direct": result.direct},
            probes={"t": task.t, "x": x.tolist(), "s": task.s, "T": task.T, "y": y.tolist(), "panels": result.panels},
            residuals={
                "residual": result.residual,
                "relative": relative,
                "tail_bound": result.tail_bound,
                "normalization_error": abs(mass - 1.0),
            },
            passed=bool(relative <= task.tol and abs(mass - 1.0) <= task.tol),
            runtime_ms=1e3 * (time.perf_counter() - started),
        )
        payload = self._emit_report(report, "kernel_ck")
        return TaskResult(name="kernel-ck", passed=report.passed, payloads=[payload])

    def _sample(self) -> TaskResult:
        task = self.task
        x = self._point(task.x, "x")
        k = self.kernel
        if task.steps == 0:
            batch = sample_exact(k, task.t, x, task.T, task.n, task.seed, threads=self.threads)
        else:
            batch = euler_maruyama(
                self.spec, task.t, x, task.T, task.steps, task.n, task.seed,
                threads=self.threads, probe_box=self.box,
            )
        if self.writer.wants("csv"):
            self.writer.write_frame("samples.csv", batch.to_frame())

        payload = {
            "meta": batch.meta,
            "seed": batch.seed,
            "n": batch.n,
            "mean": batch.points.mean(axis=0),
            "covariance": np.cov(batch.points, rowvar=False) if batch.n > 1 else None,
        }
        if task.T > task.t:
            payload["mahalanobis_mean"] = mahalanobis_mean(batch, k)
        if task.kde_points:
            points = self._points(task.kde_points, "kde_points")
            payload["kde"] = {
                "points": points,
                "bandwidth": task.bandwidth,
                "density": kde_density(batch, k.fam, task.bandwidth, points),
            }
        self._emit_payload(payload, "samples", "sample")
        return TaskResult(name="sample", payloads=[payload])

    def _solve(self) -> TaskResult:
        task = self.task
        grid = self._grid(task.t_start, task.T)
        if task.pole:
            pole = self._point(task.pole, "pole")
            solution = self._fundamental(grid, pole, task.T)
        else:
            tree = parse_expr(task.phi, self.spec.d)
            solution = solve_backward(
                self.spec, lambda p: np.broadcast_to(tree.evaluate(task.T, p), p.shape[:-1]), grid,
            )
        self._emit_solution(solution, "solution")
        payload = {"grid": {"bounds": grid.bounds, "counts": grid.counts, "times": len(grid.times)}}
        payload.update(solution.metadata)
        payload["mass"] = solution.mass()
        self._emit_payload(payload, "solution", "solve")
        return TaskResult(name="solve", payloads=[payload])

    def _scale(self) -> TaskResult:
        task = self.task
        k = self.kernel
        checks = []
        passed = True
        for lam in task.lams:
            for label, check in (("homogeneous", scaled_kernel_check), ("generalized", generalized_scaled_kernel_check)):
                result = check(k, lam, samples=task.samples, seed=task.seed)
                ok = (not result.applicable) or result.max_rel_error <= task.tol
                passed = passed and ok
                checks.append({"kind": label, "passed": ok, **result.__dict__})
        sweep = lambda_sweep(self.spec.B, task.lams, task.taus, threads=self.threads)
        payload = {"checks": checks, "lambda_sweep": sweep.to_dict(), "pass": passed}
        if self.writer.wants("csv"):
            self.writer.write_frame("scale.csv", pd.DataFrame(checks))
        self._emit_payload(payload, "scale", "scale")
        return TaskResult(name="scale", passed=passed, payloads=[payload])

    def _evaluator(self):
        """verify 작업용 밀도 계산기와 극점 (kernel 또는 유한차분 추정)"""
        task = self.task
        if task.source == "kernel":
            return self.kernel, None
        pole = self._point(task.pole, "pole")
        grid = self._grid(task.T - max(task.taus), task.T)
        solution = self._fundamental(grid, pole, task.T)
        return GridDensity(solution=solution, T=task.T, y=pole), pole

    def _fd_probes(self, evaluator: GridDensity, pole: np.ndarray) -> np.ndarray:
        """격자 안쪽 탐침 점"""
        points = self._probe_lattice(pole)
        grid = evaluator.solution.grid
        inside = np.all([(points[:, j] >= lo) & (points[:, j] <= hi) for j, (lo, hi) in enumerate(grid.bounds)], axis=0)
        return points[inside]

    def _verify_nash(self) -> TaskResult:
        task = self.task
        evaluator, pole = self._evaluator()
        fam = self.kernel.fam
        if pole is None:
            # Gamma_0 의 최대는 y = e^{(T-t)B} x 에서 나오므로 원점 쌍을 포함
            origin = np.zeros((1, self.spec.d))
            x_points, y_points = np.vstack([origin, self._probe_lattice(origin[0])]), origin
        else:
            x_points, y_points = self._fd_probes(evaluator, pole), pole[None, :]
        reports = [nash_constant(evaluator, fam, task.taus, x_points, y_points, T=task.T, threads=self.threads)]
        taus = np.asarray(task.taus)
        if np.log10(taus.max() / taus.min()) >= 1.5:
            reports.append(exponent_regression(evaluator, fam, task.taus, x_points, y_points, T=task.T, tol=task.slope_tol))
        payloads = [self._emit_report(r, f"verify_{r.estimate}") for r in reports]
        return TaskResult(name="verify-nash", passed=all(r.passed for r in reports), payloads=payloads)

    def _verify_bound(self) -> TaskResult:
        task = self.task
        evaluator, pole = self._evaluator()
        fam = self.kernel.fam
        if pole is None:
            lattice = self._probe_lattice(np.zeros(self.spec.d))
            x_points, y_points = lattice, lattice
        else:
            x_points, y_points = self._fd_probes(evaluator, pole), pole[None, :]
        report = fit_gaussian_bound(
            evaluator, self.spec.B, fam, task.taus, x_points, y_points,
            T=task.T, t0=self.config.operator.t0, threads=self.threads,
        )
        payload = self._emit_report(report, "verify_bound")
        return TaskResult(name="verify-bound", passed=report.passed, payloads=[payload])

    def _verify_tail(self) -> TaskResult:
        task = self.task
        k = self.kernel
        x = self._point(task.x, "x")
        sides = ("forward", "dual") if task.side == "both" else (task.side,)
        reports = [tail_mass_check(k, task.t, x, task.eta, task.sigmas, k_cfg=task.k, side=side) for side in sides]
        reports.append(l2_norm_check(k, task.t, x, task.eta))
        payloads = [self._emit_report(r, f"verify_{r.estimate}") for r in reports]
        return TaskResult(name="verify-tail", passed=all(r.passed for r in reports), payloads=payloads)

    def _verify_decay(self) -> TaskResult:
        task = self.task
        k = self.kernel
        y = self._point(task.y, "y")
        grid = Grid(
            bounds=tuple((task.bounds[2 * j], task.bounds[2 * j + 1]) for j in range(self.spec.d)),
            counts=tuple(task.counts),
        )
        tree = parse_expr(task.u0, self.spec.d)

        def u0(points: np.ndarray) -> np.ndarray:
            # |x - y| < sigma 에서 0
            values = np.broadcast_to(tree.evaluate(task.eta, points), points.shape[:-1])
            return np.where(np.linalg.norm(points - y, axis=-1) >= task.sigma, values, 0.0)

        report = decay_check(k, y, task.sigma, task.eta, task.taus, u0, grid, k_cfg=task.k)
        payload = self._emit_report(report, "verify_decay")
        return TaskResult(name="verify-decay", passed=report.passed, payloads=[payload])

    def _moser(self) -> TaskResult:
        task = self.task
        z0_values = np.asarray(task.z0, dtype=float)
        if len(z0_values) != self.spec.d + 1:
            raise ValueError(f"z0 는 (t, x1..x{self.spec.d}) {self.spec.d + 1} 개 값이어야 합니다")
        z0 = GroupElement(z0_values[0], z0_values[1:])
        pole = self._point(task.pole, "pole") if task.pole else np.zeros(self.spec.d)

        if task.source == "kernel":
            k = self.kernel
            grid = self._grid(task.t_start, task.t_end)
            solution = GridSolution.from_function(grid, lambda t, p: density(k, t, p, task.T, pole))
        else:
            grid = self._grid(task.t_start, task.T)
            solution = self._fundamental(grid, pole, task.T)
        fam = self.kernel.fam

        results = []
        for p in task.ps:
            for rho in task.rhos:
                result = moser_check(solution, z0, rho, task.r, p, self.spec.B, fam)
                results.append(result.to_dict())
        ratios = np.array([r["ratio"] for r in results])
        passed = bool(np.all(np.isfinite(ratios)) and np.all(ratios > 0))
        payload = {"z0": [z0.t] + z0.x.tolist(), "pole": pole, "T": task.T, "results": results, "pass": passed}
        self._emit_payload(payload, "moser", "moser")
        if self.writer.wants("csv"):
            self.writer.write_frame("moser.csv", pd.DataFrame(results))
        return TaskResult(name="moser", passed=passed, payloads=[payload])
