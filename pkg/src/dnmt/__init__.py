"""Document-level neural machine translation with discourse structure.

Word embeddings are enriched with encoded RST discourse paths, the
sentence encoder output is mixed with hierarchical attention over
previous source sentences, and everything runs on a small numpy-backed
autodiff core.
"""

from .tensor import Tape, Tensor, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "no_grad", "__version__"]
