"""Source-free domain adaptation for single-image dehazing, on a small numpy autodiff engine."""

from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "no_grad", "__version__"]
