"""condenser_forge: attention-condenser defect classifiers on numpy.

Subpackages and modules:

* ``autodiff``  reverse-mode autodiff, NCHW ops, SGD
* ``blocks``    attention condenser, AADS, residual block, dual head
* ``arch``      architecture DSL, shapes, cost model, constraints, weights I/O
* ``explorer``  constrained evolutionary search scored by NetScore
* ``synth``     procedural light-guide-plate dataset
* ``train``     discrepancy-loss training, evaluation, benchmarking
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DatasetFormatError,
    DivergenceError,
    DSLError,
    ForgeError,
    GradientError,
    ShapeError,
    WeightsFormatError,
)

__all__ = [
    "DSLError", "DatasetFormatError", "DivergenceError", "ForgeError", "GradientError",
    "ShapeError", "WeightsFormatError", "__version__",
]
