"""Unknown-speaker clustering from log-mel CNN embeddings.

Pipeline: 1 s log-mel snippets -> CNN (trained as a speaker classifier)
-> L7 embeddings -> cosine average-linkage clustering with automatic
speaker count -> chroma-refined change points; plus one-vs-one linear SVM
identification.
"""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
