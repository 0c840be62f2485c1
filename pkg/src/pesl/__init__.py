"""Lossless privacy-preserving split learning.

A from-scratch Transformer-encoder stack whose forward and backward
passes are exactly equivalent under row/column permutation of the
feature matrix with conjugated weights. An edge holds the embedding
and the head; a cloud holds the encoder stack; only shuffled features
and shuffled gradients cross the wire.
"""

from .backend import ACTIVE_BACKEND, HAVE_NUMBA, active_backend
from .config import (
    DataConfig,
    ModelConfig,
    RunConfig,
    TrainConfig,
    TransportConfig,
    load_run_config,
    parse_run_config,
    stream_rng,
)
from .edge import EdgeWeights, init_edge, patch_embed
from .encoder import (
    EncoderBlockWeights,
    conjugate_stack,
    init_blocks,
    load_stack,
    save_stack,
    stack_backward,
    stack_forward,
    teb_backward,
    teb_forward,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DecodeError,
    DomainError,
    HandshakeError,
    PeslError,
    ProtocolError,
    ShapeError,
)
from .permutation import (
    Permutation,
    ShuffleKey,
    load_key,
    log2_perm_space,
    make_key,
    mixup_space_factor,
    save_key,
)
from .runtime import (
    authorize,
    build_datasets,
    build_model,
    cutmix,
    deauthorize,
    evaluate,
    run_training,
    shuffle_feature,
    unshuffle_output,
)

__version__ = "1.0.0"

__all__ = [
    "ACTIVE_BACKEND",
    "HAVE_NUMBA",
    "active_backend",
    "ConfigError",
    "ContractError",
    "DataError",
    "DecodeError",
    "DomainError",
    "HandshakeError",
    "PeslError",
    "ProtocolError",
    "ShapeError",
    "DataConfig",
    "ModelConfig",
    "RunConfig",
    "TrainConfig",
    "TransportConfig",
    "load_run_config",
    "parse_run_config",
    "stream_rng",
    "EdgeWeights",
    "init_edge",
    "patch_embed",
    "EncoderBlockWeights",
    "conjugate_stack",
    "init_blocks",
    "load_stack",
    "save_stack",
    "stack_backward",
    "stack_forward",
    "teb_backward",
    "teb_forward",
    "Permutation",
    "ShuffleKey",
    "load_key",
    "log2_perm_space",
    "make_key",
    "mixup_space_factor",
    "save_key",
    "authorize",
    "build_datasets",
    "build_model",
    "cutmix",
    "deauthorize",
    "evaluate",
    "run_training",
    "shuffle_feature",
    "unshuffle_output",
    "__version__",
]
