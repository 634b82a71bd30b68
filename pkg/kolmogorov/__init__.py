from kolmogorov.coeff_expr import CoefficientField, OperatorSpec, ValidationBox, check_assumptions, parse_expr
from kolmogorov.grid import Grid, GridSolution, box_grid
from kolmogorov.group_structure import (
    BlockStructure,
    DilationFamily,
    DriftMatrix,
    GroupElement,
    homogeneous_dimension,
    hypoellipticity_check,
    validate_blocks,
)
from kolmogorov.kernel import GaussianKernel, covariance, density, log_density
from kolmogorov.verify import VerificationReport

__all__ = [
    'BlockStructure',
    'CoefficientField',
    'DilationFamily',
    'DriftMatrix',
    'GaussianKernel',
    'Grid',
    'GridSolution',
    'GroupElement',
    'OperatorSpec',
    'ValidationBox',
    'VerificationReport',
    'box_grid',
    'check_assumptions',
    'covariance',
    'density',
    'homogeneous_dimension',
    'hypoellipticity_check',
    'log_density',
    'parse_expr',
    'validate_blocks',
]
