import textwrap
from pathlib import Path

import numpy as np
import pytest

from kolmogorov.coeff_expr import CoefficientField, OperatorSpec
from kolmogorov.group_structure import BlockStructure, validate_blocks
from kolmogorov.kernel import GaussianKernel

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

PROTOTYPE_B = [[0.0, 0.0], [1.0, 0.0]]
KINETIC_B = [
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
]


@pytest.fixture
def prototype_B():
    return validate_blocks(PROTOTYPE_B, (1, 1))


@pytest.fixture
def prototype_kernel(prototype_B):
    return GaussianKernel(prototype_B)


@pytest.fixture
def prototype_spec(prototype_B):
    coeffs = CoefficientField.constant(np.array([[0.5]]), d=2)
    return OperatorSpec(blocks=prototype_B.structure, B=prototype_B, coeffs=coeffs, mu=2.0)


@pytest.fixture
def variable_spec(prototype_B):
    coeffs = CoefficientField.from_sources(["1 + 0.5*sin(x2)"], [], "0", d=2)
    return OperatorSpec(blocks=prototype_B.structure, B=prototype_B, coeffs=coeffs, mu=2.0)


@pytest.fixture
def heat_kernel():
    return GaussianKernel(validate_blocks(np.zeros((2, 2)), (2,)))


@pytest.fixture
def heat1_kernel():
    return GaussianKernel(validate_blocks(np.zeros((1, 1)), (1,)))


@pytest.fixture
def kinetic_kernel():
    return GaussianKernel(validate_blocks(KINETIC_B, (2, 2)))


@pytest.fixture
def nonhomogeneous_kernel():
    return GaussianKernel(validate_blocks([[0.1, 0.0], [1.0, 0.0]], BlockStructure((1, 1))))


@pytest.fixture
def write_config(tmp_path):
    """INI 문자열을 임시 설정 파일로 저장"""

    def write(body: str, name: str = "run.cfg") -> Path:
        path = tmp_path / name
        path.write_text(textwrap.dedent(body).lstrip(), encoding="utf-8")
        return path

    return write


@pytest.fixture
def random_drift():
    """블록 구조 m 에 맞는 임의의 B (부대각 블록은 full rank)"""

    def make(rng: np.random.Generator, m, homogeneous: bool = False):
        structure = BlockStructure(tuple(m))
        entries = np.zeros((structure.d, structure.d))
        for i in range(len(structure.m)):
            for j in range(i - 1, len(structure.m)):
                if j < 0:
                    continue
                rows, cols = structure.block_slice(i), structure.block_slice(j)
                shape = (structure.m[i], structure.m[j])
                if j == i - 1:
                    entries[rows, cols] = np.eye(*shape) + 0.3 * rng.normal(size=shape)
                elif not homogeneous:
                    entries[rows, cols] = 0.5 * rng.normal(size=shape)
        return validate_blocks(entries, structure)

    return make
