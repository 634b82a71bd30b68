from typing import Annotated, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _split(value, sep: str = ","):
    """INI 문자열 값을 목록으로 (빈 항목 제외)"""
    if isinstance(value, str):
        return [part.strip() for part in value.split(sep) if part.strip()]
    return value


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


# 연산자 설정 모델
class OperatorSection(Section):
    m: List[int]
    B: List[float]
    a: List[str]
    drift: List[str] = []
    c: str = "0"
    mu: float = 1.0
    bound_m: float = float("inf")
    t0: float = Field(1.0, gt=0)
    box_t: List[float] = [0.0, 1.0]
    box_x: List[float] = [-5.0, 5.0]
    box_n: int = Field(33, ge=2)

    @field_validator("m", "B", "box_t", "box_x", mode="before")
    @classmethod
    def split_numbers(cls, value):
        return _split(value)

    @field_validator("a", "drift", mode="before")
    @classmethod
    def split_expressions(cls, value):
        # 식 안에 min(,) 이 있으므로 ';' 로 구분
        return _split(value, ";")

    @model_validator(mode="after")
    def check_shapes(self):
        d = sum(self.m)
        if len(self.B) != d * d:
            raise ValueError(f"B 는 행 우선 {d}x{d} 개 값이어야 합니다: {len(self.B)} 개")
        if len(self.box_t) != 2:
            raise ValueError("box_t 는 (t0, t1) 두 값이어야 합니다")
        if len(self.box_x) not in (2, 2 * d):
            raise ValueError(f"box_x 는 2 개 또는 {2 * d} 개 값이어야 합니다")
        return self

    @property
    def d(self) -> int:
        return sum(self.m)


def _numbers(*names: str):
    return field_validator(*names, mode="before")(lambda cls, value: _split(value))


# 작업 설정 모델 (name 으로 구분)
class TaskBase(Section):
    threads: Optional[int] = Field(None, ge=1)


class GridFields(Section):
    bounds: List[float] = []
    counts: List[int] = []
    n_steps: Optional[int] = Field(None, ge=1)
    cfl_safety: float = Field(0.9, gt=0, le=1)

    split_grid = _numbers("bounds", "counts")


class DescribeTask(TaskBase):
    name: Literal["describe"] = "describe"


class KernelEvalTask(TaskBase):
    name: Literal["kernel-eval"] = "kernel-eval"
    t: float = 0.0
    x: List[float]
    T: float = 1.0
    y: List[float]
    h: Optional[float] = Field(None, gt=0)

    split_points = _numbers("x", "y")


class KernelCkTask(TaskBase):
    name: Literal["kernel-ck"] = "kernel-ck"
    t: float = 0.0
    x: List[float]
    s: float = 0.5
    T: float = 1.0
    y: List[float]
    tol: float = 1e-6

    split_points = _numbers("x", "y")


class SampleTask(TaskBase):
    name: Literal["sample"] = "sample"
    t: float = 0.0
    x: List[float]
    T: float = 1.0
    n: int = Field(1000, ge=1)
    seed: int = 0
    steps: int = Field(0, ge=0)
    bandwidth: Optional[float] = Field(None, gt=0)
    kde_points: List[float] = []

    split_points = _numbers("x", "kde_points")


class SolveTask(GridFields, TaskBase):
    name: Literal["solve"] = "solve"
    t_start: float = 0.0
    T: float = 1.0
    phi: str = "1"
    pole: List[float] = []
    eps: List[float] = []

    split_pole = _numbers("pole", "eps")


class ScaleTask(TaskBase):
    name: Literal["scale"] = "scale"
    lams: List[float] = [0.25, 0.5, 2.0]
    taus: List[float] = [0.1, 0.5, 1.0]
    samples: int = Field(100, ge=1)
    seed: int = 0
    tol: float = 1e-10

    split_lams = _numbers("lams", "taus")


class ProbeFields(GridFields):
    source: Literal["kernel", "fd"] = "kernel"
    taus: List[float]
    T: float = 1.0
    probe_extent: float = Field(4.0, gt=0)
    probe_count: int = Field(9, ge=1)
    pole: List[float] = []
    eps: List[float] = []

    split_probe = _numbers("taus", "pole", "eps")


class VerifyNashTask(ProbeFields, TaskBase):
    name: Literal["verify-nash"] = "verify-nash"
    slope_tol: float = 0.05


class VerifyBoundTask(ProbeFields, TaskBase):
    name: Literal["verify-bound"] = "verify-bound"


class VerifyTailTask(TaskBase):
    name: Literal["verify-tail"] = "verify-tail"
    t: float = 0.9
    x: List[float]
    eta: float = 1.0
    sigmas: List[float]
    k: float = Field(8.0, gt=0)
    side: Literal["forward", "dual", "both"] = "both"

    split_points = _numbers("x", "sigmas")


class VerifyDecayTask(GridFields, TaskBase):
    name: Literal["verify-decay"] = "verify-decay"
    y: List[float]
    sigma: float = Field(1.0, gt=0)
    eta: float = 1.0
    taus: List[float]
    k: float = Field(8.0, gt=0)
    u0: str

    split_points = _numbers("y", "taus")


class MoserTask(GridFields, TaskBase):
    name: Literal["moser"] = "moser"
    source: Literal["kernel", "fd"] = "kernel"
    z0: List[float]
    rhos: List[float] = [0.3, 0.4, 0.5]
    r: float = 0.6
    ps: List[float] = [1.0, 2.0, -1.0]
    t_start: float = 0.0
    t_end: float = 1.0
    T: float = 1.0
    pole: List[float] = []
    eps: List[float] = []

    split_points = _numbers("z0", "rhos", "ps", "pole", "eps")


TaskSection = Annotated[
    Union[
        DescribeTask, KernelEvalTask, KernelCkTask, SampleTask, SolveTask, ScaleTask,
        VerifyNashTask, VerifyBoundTask, VerifyTailTask, VerifyDecayTask, MoserTask,
    ],
    Field(discriminator="name"),
]

TASK_NAMES = (
    "describe", "kernel-eval", "kernel-ck", "sample", "solve", "scale",
    "verify-nash", "verify-bound", "verify-tail", "verify-decay", "moser",
)

OutputFormat = Literal["csv", "json", "txt", "svg", "bin"]


class OutputSection(Section):
    dir: Optional[str] = None
    formats: List[OutputFormat] = ["csv", "json", "txt"]

    @field_validator("formats", mode="before")
    @classmethod
    def split_formats(cls, value):
        return _split(value)


class RunConfig(Section):
    operator: OperatorSection
    task: TaskSection
    output: OutputSection = OutputSection()


# 보고서 응답 모델
class ReportModel(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    estimate: str
    constants: Dict
    probes: Dict
    residuals: Dict = {}
    passed: bool = Field(alias="pass")
    runtime_ms: float
    config_sha256: str


class DescribeSummary(BaseModel):
    d: int
    m: List[int]
    Q: int
    homogeneous: bool
    hypoelliptic: bool
    mu_hat: float
    bounds: Dict[str, float]
    config_sha256: str
