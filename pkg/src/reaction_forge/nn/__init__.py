from reaction_forge.nn.adam import AdamState, adam_step, apply_named
from reaction_forge.nn.gaussian import (
    GaussianHead,
    gaussian_log_prob,
    gaussian_log_prob_tape,
    gaussian_sample,
)
from reaction_forge.nn.mlp import MlpParams, MlpTape, mlp_forward, mlp_init
from reaction_forge.nn.serialize import pack_mlp, unpack_mlp
from reaction_forge.nn.tensor import (
    Tensor,
    as_tensor,
    concat,
    minimum,
    normalize_rows,
    parameter,
    where_const,
)

__all__ = [
    "AdamState",
    "adam_step",
    "apply_named",
    "GaussianHead",
    "gaussian_log_prob",
    "gaussian_log_prob_tape",
    "gaussian_sample",
    "MlpParams",
    "MlpTape",
    "mlp_forward",
    "mlp_init",
    "pack_mlp",
    "unpack_mlp",
    "Tensor",
    "as_tensor",
    "concat",
    "minimum",
    "normalize_rows",
    "parameter",
    "where_const",
]
