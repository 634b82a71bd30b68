import json

import numpy as np
import pandas as pd
import pytest

from app.outputs import OutputWriter, jsonable, report_text
from kolmogorov.grid import Grid, GridSolution

DIGEST = "ab" * 32


@pytest.fixture
def writer(tmp_path):
    return OutputWriter(tmp_path / "out", DIGEST, ["csv", "json", "txt", "svg", "bin"])


def test_csv_header_and_precision(writer):
    frame = pd.DataFrame({"x1": [0.1, 1.0 / 3.0], "density": [1e-300, 2.0]})
    path = writer.write_frame("values.csv", frame)
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    lines = raw.decode("utf-8").split("\n")
    assert lines[0] == f"# config_sha256={DIGEST}"
    assert lines[1] == "x1,density"
    # 17 자리로 왕복 가능
    assert float(lines[3].split(",")[0]) == 1.0 / 3.0
    restored = pd.read_csv(path, comment="#", float_precision="round_trip")
    assert np.array_equal(restored["density"].to_numpy(), frame["density"].to_numpy())


def test_json_payload(writer):
    path = writer.write_json("report.json", {"value": np.float64(np.nan), "count": np.int64(3), "ok": np.bool_(True)})
    body = json.loads(path.read_text(encoding="utf-8"))
    assert body == {"value": None, "count": 3, "ok": True, "config_sha256": DIGEST}
    text = path.read_text(encoding="utf-8")
    assert text.index('"config_sha256"') < text.index('"count"') < text.index('"ok"')


def test_text_header(writer):
    path = writer.write_text("summary.txt", "line")
    assert path.read_text(encoding="utf-8") == f"# config_sha256={DIGEST}\nline\n"


def test_svg_comment_after_declaration(writer):
    path = writer.write_svg("plot.svg", '<?xml version="1.0"?>\n<svg></svg>')
    lines = path.read_text(encoding="utf-8").split("\n")
    assert lines[0] == '<?xml version="1.0"?>'
    assert lines[1] == f"<!-- config_sha256={DIGEST} -->"
    bare = writer.write_svg("bare.svg", "<svg></svg>")
    assert bare.read_text(encoding="utf-8").startswith("<!-- config_sha256=")


def test_bytes_readable_after_header(writer):
    grid = Grid(bounds=((0.0, 1.0),), counts=(3,), t_start=0.0, t_end=1.0, n_steps=1)
    solution = GridSolution(values=np.arange(6, dtype=float).reshape(2, 3), grid=grid)
    path = writer.write_bytes("solution.bin", solution.to_bytes())
    restored = GridSolution.from_bytes(path.read_bytes())
    assert np.array_equal(restored.values, solution.values)


def test_cleanup_removes_partial_outputs(writer):
    first = writer.write_text("a.txt", "a")
    second = writer.write_json("b.json", {})
    writer.cleanup()
    assert not first.exists() and not second.exists()
    assert writer.written == []


def test_wants(tmp_path):
    writer = OutputWriter(tmp_path, DIGEST, ["json"])
    assert writer.wants("json")
    assert not writer.wants("csv")


def test_jsonable_nested():
    value = jsonable({"a": (np.array([1.0, np.inf]),), 2: [np.float32(0.5)]})
    assert value == {"a": [[1.0, None]], "2": [0.5]}


def test_report_text():
    text = report_text("nash", {"constants": {"C": 0.5}, "probes": {"taus": list(range(20)), "T": 1.0}})
    lines = text.split("\n")
    assert lines[0] == "[nash]"
    assert "constants.C = 0.5" in lines
    assert "probes.taus = [20 values]" in lines
    assert "probes.T = 1.0" in lines
