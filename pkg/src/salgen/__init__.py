"""salgen: desk-scale generative salient-object detection."""

__version__ = "0.1.0"

from .tensor import Tensor, set_precision, get_precision, no_grad  # noqa: F401
