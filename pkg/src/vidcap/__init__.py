"""Multi-branch attention video captioner built on numpy.

Subpackages split along the pipeline: numerics (RNG and numeric
primitives), data (vocabulary, features, synthetic corpus), model
(forward pass), training (backward pass and optimizer), decoding
(beam search), metrics (caption scores), checkpoint and cli.
"""

__version__ = "0.1.0"
