import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.17g"


def jsonable(obj):
    """numpy 값과 유한하지 않은 실수를 JSON 호환 값으로"""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


class OutputWriter:
    """작업 출력 파일 작성기: 모든 파일은 설정 해시 주석으로 시작"""

    def __init__(self, out_dir: Path, config_sha256: str, formats: Sequence[str]):
        self.out_dir = Path(out_dir)
        self.config_sha256 = config_sha256
        self.formats = set(formats)
        self.written: List[Path] = []

    def wants(self, fmt: str) -> bool:
        return fmt in self.formats

    @property
    def header(self) -> str:
        return f"# config_sha256={self.config_sha256}\n"

    def _path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / name
        self.written.append(path)
        return path

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        path = self._path(name)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.header)
            frame.to_csv(f, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        return path

    def write_json(self, name: str, payload: Dict) -> Path:
        path = self._path(name)
        body = dict(jsonable(payload))
        body["config_sha256"] = self.config_sha256
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(json.dumps(body, indent=2, sort_keys=True, allow_nan=False))
            f.write("\n")
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self._path(name)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.header)
            f.write(text if text.endswith("\n") else text + "\n")
        return path

    def write_bytes(self, name: str, payload: bytes) -> Path:
        path = self._path(name)
        with open(path, "wb") as f:
            f.write(self.header.encode("ascii"))
            f.write(payload)
        return path

    def write_svg(self, name: str, svg: str) -> Path:
        comment = f"<!-- config_sha256={self.config_sha256} -->"
        if svg.startswith("<?xml"):
            end = svg.index("?>") + 2
            svg = svg[:end] + "\n" + comment + svg[end:]
        else:
            svg = comment + "\n" + svg
        path = self._path(name)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(svg)
        return path

    def cleanup(self):
        """실패한 작업의 부분 출력 삭제"""
        for path in self.written:
            if path.exists():
                path.unlink()
                logger.info("부분 출력 삭제: %s", path)
        self.written.clear()


def report_text(title: str, payload: Dict) -> str:
    """사람이 읽을 요약 (키 = 값 줄)"""
    lines = [f"[{title}]"]

    def walk(prefix: str, value):
        if isinstance(value, dict):
            for k in sorted(value):
                walk(f"{prefix}.{k}" if prefix else str(k), value[k])
        elif isinstance(value, list) and len(value) > 8:
            lines.append(f"{prefix} = [{len(value)} values]")
        else:
            lines.append(f"{prefix} = {value}")

    walk("", jsonable(payload))
    return "\n".join(lines)
