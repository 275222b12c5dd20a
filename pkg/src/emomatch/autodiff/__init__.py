from .tensor import Graph, NumericError, Parameter, ShapeError, Tensor, topological_order
from . import ops
from .ops import apply_op, OPS
from .optim import Adam, adam_step
from .gradcheck import grad_check, run_gradcheck_suite, PROBES

__all__ = [
    "Adam",
    "Graph",
    "NumericError",
    "OPS",
    "PROBES",
    "Parameter",
    "ShapeError",
    "Tensor",
    "adam_step",
    "apply_op",
    "grad_check",
    "ops",
    "run_gradcheck_suite",
    "topological_order",
]
