from .checkpoint import read_checkpoint, write_checkpoint
from .core import DTYPE, Graph, ParamStore, Tensor, backward
from .optim import adam_step

__all__ = ["DTYPE", "Graph", "ParamStore", "Tensor", "backward", "adam_step",
           "read_checkpoint", "write_checkpoint"]
