import logging
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from kolmogorov.group_structure import BlockStructure, DriftMatrix

logger = logging.getLogger(__name__)

FUNCTIONS: Dict[str, Tuple[int, object]] = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "tanh": (1, np.tanh),
    "abs": (1, np.abs),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
}

# 결합력: + - < * / < 단항 - < ^
ADD_BP = 10
MUL_BP = 20
UNARY_BP = 25
POW_BP = 30


class ExprSyntaxError(ValueError):
    """계수 식 구문 오류 (offset 은 바이트 위치)"""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class ExprEvalError(ValueError):
    """계수 식 계산 결과가 유한하지 않을 때"""

    def __init__(self, message: str, location: Optional[Tuple[float, Tuple[float, ...]]] = None):
        if location is not None:
            message = f"{message} at t={location[0]!r}, x={location[1]!r}"
        super().__init__(message)
        self.location = location


class AssumptionError(ValueError):
    """타원성 / 유계성 가정 위반"""


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Number:
    value: float

    def evaluate(self, t, x):
        return self.value

    def to_source(self) -> str:
        return repr(float(self.value))


@dataclass(frozen=True)
class Variable:
    """index 0 은 t, k >= 1 은 x_k"""
    index: int

    def evaluate(self, t, x):
        if self.index == 0:
            return t
        return x[..., self.index - 1]

    def to_source(self) -> str:
        return "t" if self.index == 0 else f"x{self.index}"


@dataclass(frozen=True)
class Neg:
    operand: object

    def evaluate(self, t, x):
        return -self.operand.evaluate(t, x)

    def to_source(self) -> str:
        return f"(-{self.operand.to_source()})"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object

    def evaluate(self, t, x):
        lhs = self.left.evaluate(t, x)
        rhs = self.right.evaluate(t, x)
        if self.op == "+":
            return np.add(lhs, rhs)
        if self.op == "-":
            return np.subtract(lhs, rhs)
        if self.op == "*":
            return np.multiply(lhs, rhs)
        if self.op == "/":
            return np.divide(lhs, rhs)
        # 지수는 정수 리터럴
        return np.power(np.asarray(lhs, dtype=float), int(self.right.value))

    def to_source(self) -> str:
        if self.op == "^":
            return f"({self.left.to_source()}^{int(self.right.value)})"
        return f"({self.left.to_source()}{self.op}{self.right.to_source()})"


@dataclass(frozen=True)
class Call:
    name: str
    args: Tuple[object, ...]

    def evaluate(self, t, x):
        _, fn = FUNCTIONS[self.name]
        return fn(*(arg.evaluate(t, x) for arg in self.args))

    def to_source(self) -> str:
        return f"{self.name}({','.join(arg.to_source() for arg in self.args)})"


# ---------------------------------------------------------------------------
# 파서
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Token:
    kind: str  # number | name | op | end
    text: str
    offset: int


_TOKEN_PATTERN = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _byte_offset(source: str, pos: int) -> int:
    return len(source[:pos].encode("utf-8"))


def tokenize(source: str) -> List[Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        match = _TOKEN_PATTERN.match(source, pos)
        if match is None or match.lastgroup is None:
            stripped = len(source[pos:]) - len(source[pos:].lstrip())
            bad = pos + stripped
            raise ExprSyntaxError(f"알 수 없는 문자 {source[bad]!r}", _byte_offset(source, bad))
        kind = match.lastgroup
        start = match.start(kind)
        tokens.append(Token(kind, match.group(kind), _byte_offset(source, start)))
        pos = match.end()
    tokens.append(Token("end", "", _byte_offset(source, len(source))))
    return tokens


class _Parser:
    """Pratt 방식 재귀 하강 파서 (좌결합)"""

    def __init__(self, source: str, d: int):
        self.tokens = tokenize(source)
        self.pos = 0
        self.d = d

    @property
    def token(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> Token:
        tok = self.token
        if tok.kind != "op" or tok.text != text:
            found = tok.text or "입력 끝"
            raise ExprSyntaxError(f"{text!r} 가 필요하지만 {found!r} 를 만났습니다", tok.offset)
        return self.advance()

    def parse(self):
        node = self.expression(0)
        if self.token.kind != "end":
            raise ExprSyntaxError(f"예상하지 못한 토큰 {self.token.text!r}", self.token.offset)
        return node

    def expression(self, rbp: int):
        left = self.nud(self.advance())
        while rbp < self._lbp(self.token):
            left = self.led(self.advance(), left)
        return left

    @staticmethod
    def _lbp(tok: Token) -> int:
        if tok.kind != "op":
            return 0
        return {"+": ADD_BP, "-": ADD_BP, "*": MUL_BP, "/": MUL_BP, "^": POW_BP}.get(tok.text, 0)

    def nud(self, tok: Token):
        if tok.kind == "number":
            return Number(float(tok.text))
        if tok.kind == "name":
            return self._name(tok)
        if tok.kind == "op" and tok.text == "-":
            return Neg(self.expression(UNARY_BP))
        if tok.kind == "op" and tok.text == "(":
            node = self.expression(0)
            self.expect(")")
            return node
        found = tok.text or "입력 끝"
        raise ExprSyntaxError(f"식이 필요하지만 {found!r} 를 만났습니다", tok.offset)

    def led(self, tok: Token, left):
        if tok.text == "^":
            return BinOp("^", left, self._integer_exponent())
        return BinOp(tok.text, left, self.expression(self._lbp(tok)))

    def _integer_exponent(self) -> Number:
        sign = 1
        tok = self.advance()
        if tok.kind == "op" and tok.text == "-":
            sign = -1
            tok = self.advance()
        if tok.kind != "number" or not tok.text.isdigit():
            raise ExprSyntaxError("'^' 지수는 정수 리터럴이어야 합니다", tok.offset)
        return Number(float(sign * int(tok.text)))

    def _name(self, tok: Token):
        name = tok.text
        if name in FUNCTIONS:
            arity, _ = FUNCTIONS[name]
            self.expect("(")
            args = [self.expression(0)]
            while self.token.kind == "op" and self.token.text == ",":
                self.advance()
                args.append(self.expression(0))
            self.expect(")")
            if len(args) != arity:
                raise ExprSyntaxError(
                    f"함수 {name} 의 인자 개수가 맞지 않습니다 (arity {arity}, got {len(args)})", tok.offset
                )
            return Call(name, tuple(args))
        if name == "t":
            return Variable(0)
        match = re.fullmatch(r"x([1-9]\d*)", name)
        if match and int(match.group(1)) <= self.d:
            return Variable(int(match.group(1)))
        raise ExprSyntaxError(f"알 수 없는 식별자 (unknown identifier) {name!r}", tok.offset)


def parse_expr(source: str, d: int):
    """계수 식 문자열을 AST 로 변환"""
    return _Parser(source, d).parse()


# ---------------------------------------------------------------------------
# 계수장
# ---------------------------------------------------------------------------

class CoefficientModel(Protocol):
    """(a, drift, c) 를 돌려주는 계수 계산기"""
    m0: int
    d: int
    bound_m: float

    def evaluate(self, t, x) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        ...


def _checked(value, t, x, shape, label: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), shape)
    if not np.all(np.isfinite(arr)):
        idx = np.argwhere(~np.isfinite(arr))[0]
        t_full = np.broadcast_to(np.asarray(t, dtype=float), shape)
        x_full = np.broadcast_to(x, shape + (x.shape[-1],))
        location = (float(t_full[tuple(idx)]), tuple(float(v) for v in x_full[tuple(idx)]))
        raise ExprEvalError(f"{label} 계산 결과가 유한하지 않습니다", location)
    return arr


@dataclass(frozen=True)
class CoefficientField:
    """a_ij (대칭), a_i, c 식과 선언된 상한 M"""
    a: Tuple[Tuple[object, ...], ...]
    drift: Tuple[object, ...]
    c: object
    d: int
    bound_m: float = float("inf")
    sources: Dict[str, object] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        m0 = len(self.a)
        if any(len(row) != m0 for row in self.a):
            raise ValueError("a 는 정사각 행렬이어야 합니다")
        if len(self.drift) != m0:
            raise ValueError(f"drift 식 개수는 m0={m0} 이어야 합니다")
        for i in range(m0):
            for j in range(i + 1, m0):
                if self.a[i][j] != self.a[j][i]:
                    raise ValueError(f"a 가 대칭이 아닙니다: a[{i + 1}][{j + 1}] != a[{j + 1}][{i + 1}]")

    @property
    def m0(self) -> int:
        return len(self.a)

    @classmethod
    def from_sources(
            cls,
            a: Sequence[str],
            drift: Sequence[str],
            c: str,
            d: int,
            bound_m: float = float("inf"),
    ) -> "CoefficientField":
        """a 는 행 우선 m0*m0 식 목록"""
        m0 = int(round(np.sqrt(len(a))))
        if m0 * m0 != len(a):
            raise ValueError(f"a 식 개수 {len(a)} 가 제곱수가 아닙니다")
        trees = [parse_expr(src, d) for src in a]
        matrix = tuple(tuple(trees[i * m0 + j] for j in range(m0)) for i in range(m0))
        drift_trees = tuple(parse_expr(src, d) for src in drift) if drift else tuple(Number(0.0) for _ in range(m0))
        return cls(
            a=matrix,
            drift=drift_trees,
            c=parse_expr(c, d),
            d=d,
            bound_m=bound_m,
            sources={"a": list(a), "drift": list(drift), "c": c},
        )

    @classmethod
    def constant(cls, a: np.ndarray, d: int, bound_m: float = float("inf")) -> "CoefficientField":
        """상수 확산 행렬, drift=0, c=0"""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        m0 = a.shape[0]
        matrix = tuple(tuple(Number(float(a[min(i, j), max(i, j)])) for j in range(m0)) for i in range(m0))
        return cls(a=matrix, drift=tuple(Number(0.0) for _ in range(m0)), c=Number(0.0), d=d, bound_m=bound_m)

    def evaluate(self, t, x) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return eval_field(self, t, x)


def eval_field(f: CoefficientField, t, x) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """a(t,x), drift(t,x), c(t,x) 계산 (배열 입력 가능)"""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    shape = np.broadcast_shapes(t.shape, x.shape[:-1])
    m0 = f.m0

    a = np.empty(shape + (m0, m0))
    drift = np.empty(shape + (m0,))
    with np.errstate(all="ignore"):
        # 위 삼각만 계산하고 대칭으로 채움
        for i in range(m0):
            for j in range(i, m0):
                value = _checked(f.a[i][j].evaluate(t, x), t, x, shape, f"a[{i + 1}][{j + 1}]")
                a[..., i, j] = value
                a[..., j, i] = value
            drift[..., i] = _checked(f.drift[i].evaluate(t, x), t, x, shape, f"a_{i + 1}")
        c = _checked(f.c.evaluate(t, x), t, x, shape, "c")
    return a, drift, np.array(c)


@dataclass(frozen=True)
class OperatorSpec:
    """연산자 L 의 전체 데이터"""
    blocks: BlockStructure
    B: DriftMatrix
    coeffs: CoefficientModel
    mu: float = 1.0

    def __post_init__(self):
        if self.mu < 1.0:
            raise AssumptionError(f"타원성 상수 mu 는 1 이상이어야 합니다: mu={self.mu}")
        if self.B.structure != self.blocks:
            raise ValueError("B 의 블록 구조가 연산자 블록 구조와 다릅니다")
        if self.coeffs.m0 != self.blocks.m0 or self.coeffs.d != self.blocks.d:
            raise ValueError("계수장의 차원이 블록 구조와 맞지 않습니다")

    @property
    def d(self) -> int:
        return self.blocks.d

    @property
    def m0(self) -> int:
        return self.blocks.m0

    @property
    def bound_m(self) -> float:
        return self.coeffs.bound_m


@dataclass(frozen=True)
class ValidationBox:
    """격자 검증 영역 [t0, t1] x prod [lo_i, hi_i]"""
    t_range: Tuple[float, float] = (0.0, 1.0)
    x_ranges: Optional[Tuple[Tuple[float, float], ...]] = None

    def ranges(self, d: int) -> Tuple[Tuple[float, float], ...]:
        if self.x_ranges is None:
            return tuple((-5.0, 5.0) for _ in range(d))
        if len(self.x_ranges) == 1:
            return tuple(self.x_ranges) * d
        if len(self.x_ranges) != d:
            raise ValueError(f"검증 상자 차원 {len(self.x_ranges)} 이 d={d} 와 다릅니다")
        return tuple(self.x_ranges)


@dataclass
class AssumptionReport:
    mu_hat: float
    min_eig: float
    max_eig: float
    drift_sup: float
    c_sup: float
    n: int
    box: ValidationBox
    nodes: int

    def to_dict(self) -> Dict:
        return {
            "mu_hat": self.mu_hat,
            "min_eig": self.min_eig,
            "max_eig": self.max_eig,
            "drift_sup": self.drift_sup,
            "c_sup": self.c_sup,
            "n": self.n,
            "nodes": self.nodes,
        }


def _slice_stats(coeffs: CoefficientModel, t: float, points: np.ndarray) -> Dict:
    a, drift, c = coeffs.evaluate(t, points)
    eig = np.linalg.eigvalsh(a)
    lo = int(np.argmin(eig[:, 0]))
    return {
        "min_eig": float(eig[lo, 0]),
        "min_at": (float(t), tuple(float(v) for v in points[lo])),
        "max_eig": float(np.max(eig[:, -1])),
        "drift_sup": float(np.max(np.abs(drift))) if drift.size else 0.0,
        "c_sup": float(np.max(np.abs(c))),
    }


def check_assumptions(
        spec: OperatorSpec, box: Optional[ValidationBox] = None, n: int = 33, threads: int = 1
) -> AssumptionReport:
    """격자 위에서 타원성 범위와 a_i, c 의 sup 노름을 추정"""
    if n < 2:
        raise ValueError(f"축당 표본 수는 2 이상이어야 합니다: n={n}")
    box = box or ValidationBox()
    ranges = box.ranges(spec.d)
    if not all(np.isfinite(v) for r in ranges for v in r) or not all(np.isfinite(box.t_range)):
        raise ValueError("검증 상자는 유한해야 합니다")

    axes = [np.linspace(lo, hi, n) for lo, hi in ranges]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1)
    times = np.linspace(box.t_range[0], box.t_range[1], n)

    # 시간 단면별로 나눠 계산하고 순서대로 병합
    stats = Parallel(n_jobs=threads, prefer="threads")(
        delayed(_slice_stats)(spec.coeffs, float(t), points) for t in times
    )

    worst = min(stats, key=lambda s: s["min_eig"])
    min_eig = worst["min_eig"]
    max_eig = max(s["max_eig"] for s in stats)
    drift_sup = max(s["drift_sup"] for s in stats)
    c_sup = max(s["c_sup"] for s in stats)

    if min_eig <= 0.0:
        t_at, x_at = worst["min_at"]
        raise AssumptionError(
            f"a 가 양의 정부호가 아닙니다 (not positive): min eig={min_eig:.6g} at t={t_at}, x={x_at}"
        )

    mu_hat = max(1.0 / min_eig, max_eig)
    report = AssumptionReport(
        mu_hat=mu_hat, min_eig=min_eig, max_eig=max_eig, drift_sup=drift_sup, c_sup=c_sup,
        n=n, box=box, nodes=len(points) * len(times),
    )
    logger.info("가정 검사: mu_hat=%.6g, |a_i|<=%.6g, |c|<=%.6g", mu_hat, drift_sup, c_sup)

    if mu_hat > spec.mu * (1.0 + 1e-12):
        raise AssumptionError(f"추정 타원성 상수 mu_hat={mu_hat:.6g} 가 선언된 mu={spec.mu} 를 넘습니다")
    if max(drift_sup, c_sup) > spec.bound_m:
        raise AssumptionError(
            f"상한 위반 (bound violation): |a_i|<={drift_sup:.6g}, |c|<={c_sup:.6g}, M={spec.bound_m}"
        )
    return report
