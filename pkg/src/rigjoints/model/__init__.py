"""The joint localization network, its loss and checkpoint format."""

from .checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    Checkpoint,
    CheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    load_model,
    model_header,
    save_checkpoint,
    save_model,
)
from .network import (
    LEAKY_SLOPE,
    ForwardResult,
    JointLocalizer,
    ModelConfig,
    edge_features,
    edgeconv_fused,
    edgeconv_reference,
    joint_loss,
)

__all__ = [name for name in dir() if not name.startswith("_")]
