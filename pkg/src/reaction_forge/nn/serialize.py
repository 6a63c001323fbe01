"""Named-tensor packing for network parameters.

Checkpoints are flat name->array dicts, so each MLP carries a small meta
vector describing its architecture next to its weights.
"""

from __future__ import annotations

import numpy as np

from reaction_forge.errors import ContractError
from reaction_forge.nn.mlp import MlpParams

_HIDDEN_CODE = {"tanh": 0.0, "relu": 1.0}
_OUTPUT_CODE = {"identity": 0.0, "tanh": 1.0}
_HIDDEN_NAME = {v: k for k, v in _HIDDEN_CODE.items()}
_OUTPUT_NAME = {v: k for k, v in _OUTPUT_CODE.items()}


def pack_mlp(params: MlpParams, prefix: str) -> dict[str, np.ndarray]:
    out = params.tensors(prefix)
    meta = [float(len(params.layer_sizes)), _OUTPUT_CODE[params.output_activation]]
    meta += [float(n) for n in params.layer_sizes]
    meta += [_HIDDEN_CODE[a] for a in params.activations]
    out[prefix + "arch"] = np.asarray(meta)
    return out


def unpack_mlp(tensors: dict[str, np.ndarray], prefix: str) -> MlpParams:
    key = prefix + "arch"
    if key not in tensors:
        raise ContractError(f"checkpoint is missing {key!r}")
    meta = tensors[key]
    n_sizes = int(meta[0])
    out_act = _OUTPUT_NAME[float(meta[1])]
    sizes = [int(v) for v in meta[2 : 2 + n_sizes]]
    acts = [_HIDDEN_NAME[float(v)] for v in meta[2 + n_sizes :]]
    weights = [tensors[f"{prefix}w{i}"].copy() for i in range(n_sizes - 1)]
    biases = [tensors[f"{prefix}b{i}"].copy() for i in range(n_sizes - 1)]
    return MlpParams(sizes, weights, biases, acts, out_act)
