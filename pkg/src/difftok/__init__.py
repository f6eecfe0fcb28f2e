"""difftok: differentiable k-means tokenization with joint training.

A desk-scale library for training discrete-token pipelines end to end: a toy
multi-layer feature extractor, a differentiable k-means tokenizer relaxed via
Gumbel-Softmax with a straight-through hard path, a frame classifier, staged
training regimes, and token-quality metrics (PNMI, NQE, TSL, MTER).
"""

from .kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
