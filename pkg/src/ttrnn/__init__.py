"""ttrnn: tensor-train compression toolkit for recurrent networks."""

from .tensor import DenseTensor
from .tt import TTMatrix, TTVector, tt_element, tt_matvec, tt_svd, tt_to_dense

__all__ = [
    "DenseTensor",
    "TTMatrix",
    "TTVector",
    "tt_element",
    "tt_matvec",
    "tt_svd",
    "tt_to_dense",
]

__version__ = "0.1.0"
