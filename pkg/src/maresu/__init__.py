"""Linear attention (LAM) and softmax attention kernels, a toy multi-stage
attention ResU-Net, and segmentation accuracy statistics, in NumPy."""

from .attention import (
    AttentionBlockParams,
    AttentionDims,
    FlopMethod,
    KernelChoice,
    ProjectionWeights,
    attention_block_forward,
    channel_attention,
    flop_count,
    generalized_attention_direct,
    kernelized_attention,
    linear_attention_rowwise,
    linear_attention_vectorized,
    project_qkv,
    softmax_attention,
)
from .errors import (
    CorruptionError,
    DataError,
    DegenerateError,
    FormatError,
    MaresuError,
    ParameterError,
    ShapeError,
    StateError,
    VersionError,
)
from .numerics import Rng, l2_normalize_rows, matmul, row_softmax, seeded_fill

__version__ = "0.1.0"
