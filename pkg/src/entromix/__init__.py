"""entromix: robust multi-channel sequence classification.

A self-contained toolkit pairing a multi-scale temporal mixing front-end
and a patch-tokenized Transformer classifier (trained with self-distillation)
with online test-time adaptation by entropy minimization over normalization
affine parameters. Includes a synthetic covariate-shift benchmark and a CLI
harness (``entromix train|eval|adapt|ablate|synth|gradcheck``).
"""

from ._kernels import BACKEND as kernel_backend
from .tensor import Tensor, no_grad, use_dtype

__version__ = "0.1.0"

__all__ = ["Tensor", "no_grad", "use_dtype", "kernel_backend", "__version__"]
