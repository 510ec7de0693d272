"""First-passage percolation laboratory."""

__version__ = "0.1.0"

from .weight_field import (Constant, Plant, TruncatedExponential, TwoPoint, Uniform,
                           WeightField, weight_cap)
from .lattice_geom import Box, Cylinder, Everything, Frame, Slab, make_frame
from .passage_core import (BudgetExhausted, Disconnected, Hyperplane, PassageResult,
                           QuerySpec, passage_time, path_time, point_time)

__all__ = ["Constant", "Plant", "TruncatedExponential", "TwoPoint", "Uniform", "WeightField",
           "weight_cap", "Box", "Cylinder", "Everything", "Frame", "Slab", "make_frame",
           "BudgetExhausted", "Disconnected", "Hyperplane", "PassageResult", "QuerySpec",
           "passage_time", "path_time", "point_time", "__version__"]
