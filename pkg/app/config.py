import configparser
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from dotenv import load_dotenv

from app.schemas import TASK_NAMES, OperatorSection, RunConfig
from kolmogorov.coeff_expr import CoefficientField, OperatorSpec, ValidationBox
from kolmogorov.group_structure import BlockStructure, validate_blocks

load_dotenv()

logger = logging.getLogger(__name__)

SECTIONS = ("operator", "task", "output")
TASK_PREFIX = "task"


@dataclass
class EnvDefaults:
    """환경변수 (.env) 기본값"""
    threads: int = 1
    out_dir: str = "out"
    log_level: str = "WARNING"


def env_defaults() -> EnvDefaults:
    threads = os.getenv("KOLMOGOROV_THREADS")
    try:
        threads = int(threads) if threads else 1
    except ValueError:
        raise ValueError(f"KOLMOGOROV_THREADS 는 정수여야 합니다: {threads!r}")
    return EnvDefaults(
        threads=max(1, threads),
        out_dir=os.getenv("KOLMOGOROV_OUT_DIR") or "out",
        log_level=(os.getenv("KOLMOGOROV_LOG_LEVEL") or "WARNING").upper(),
    )


def read_ini(path: Path) -> Dict[str, Dict[str, str]]:
    """INI 파일을 섹션별 문자열 딕셔너리로 읽음"""
    path = Path(path)
    if not path.is_file():
        raise ValueError(f"설정 파일이 존재하지 않습니다: {path}")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    # 키 대소문자 유지 (B, T 등)
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ValueError(f"설정 파일 구문 오류: {e}")
    unknown = [s for s in parser.sections() if s not in SECTIONS and _task_of(s) not in TASK_NAMES]
    if unknown:
        raise ValueError(f"알 수 없는 설정 섹션: {unknown}")
    return {section: dict(parser.items(section)) for section in parser.sections()}


def _task_of(section: str) -> Optional[str]:
    """[task.<이름>] 섹션의 작업 이름"""
    prefix = f"{TASK_PREFIX}."
    return section[len(prefix):] if section.startswith(prefix) else None


def load_config(path: Path, task: str, overrides: Optional[Dict] = None) -> RunConfig:
    """설정 파일 + CLI 값으로 검증된 RunConfig 생성

    작업 값은 [task.<이름>] 섹션에서, 없으면 name 이 일치하는 [task] 섹션에서 읽는다.
    """
    if task not in TASK_NAMES:
        raise ValueError(f"알 수 없는 작업 {task!r} (가능: {', '.join(TASK_NAMES)})")
    raw = read_ini(path)
    if f"{TASK_PREFIX}.{task}" in raw:
        task_section = dict(raw[f"{TASK_PREFIX}.{task}"])
        declared = task_section.pop("name", task)
    else:
        task_section = dict(raw.get(TASK_PREFIX, {}))
        declared = task_section.pop("name", task)
        if task == "describe":
            # describe 는 연산자 섹션만 사용
            task_section, declared = {}, task
    if declared != task:
        raise ValueError(f"설정 파일의 작업 {declared!r} 가 요청한 작업 {task!r} 와 다릅니다")
    task_section["name"] = task
    task_section.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.model_validate({
        "operator": raw.get("operator", {}),
        "task": task_section,
        "output": raw.get("output", {}),
    })


def build_operator(section: OperatorSection) -> OperatorSpec:
    """설정의 연산자 섹션으로 OperatorSpec 생성"""
    blocks = BlockStructure(tuple(section.m))
    d = blocks.d
    B = validate_blocks(np.asarray(section.B, dtype=float).reshape(d, d), blocks)
    coeffs = CoefficientField.from_sources(section.a, section.drift, section.c, d, section.bound_m)
    return OperatorSpec(blocks=blocks, B=B, coeffs=coeffs, mu=section.mu)


def validation_box(section: OperatorSection) -> ValidationBox:
    values = section.box_x
    ranges = tuple((values[2 * j], values[2 * j + 1]) for j in range(len(values) // 2))
    return ValidationBox(t_range=(section.box_t[0], section.box_t[1]), x_ranges=ranges)


def stable_json_dumps(obj) -> str:
    """키 정렬, 공백 없는 결정적 JSON"""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True, ensure_ascii=True)


def config_hash(config: RunConfig) -> str:
    """검증된 설정의 정규 JSON SHA-256 (출력 위치와 스레드 수는 제외)"""
    payload = config.model_dump(exclude={"output": {"dir"}, "task": {"threads"}})
    return hashlib.sha256(stable_json_dumps(payload).encode("utf-8")).hexdigest()
