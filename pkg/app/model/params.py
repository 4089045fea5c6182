"""
Learnable weights of the backbone, the s/p/e heads and the instance head

Tensors are stored flat under dotted names (``enc0.a.conv.weight``,
``phi.w2``...). Batch-norm running statistics live next to them as buffers
and are serialized but never optimised.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from loguru import logger

from app.config import ArchitectureConfig
from app.tensor import BatchNormState, Tensor

PHI_OUTPUT_BIAS = -1.0


@dataclass
class PhiWeights:
    """Two 1x1 convolutions: (D_p + D_e) -> hidden -> 1"""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    positional_dim: int
    conditional_dim: int


@dataclass
class ModelParams:
    config: ArchitectureConfig
    tensors: Dict[str, Tensor] = field(default_factory=dict)
    norm_states: Dict[str, BatchNormState] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.tensors)

    @property
    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).dtype

    @property
    def phi(self) -> PhiWeights:
        return PhiWeights(
            self.tensors["phi.w1"],
            self.tensors["phi.b1"],
            self.tensors["phi.w2"],
            self.tensors["phi.b2"],
            self.config.positional_dim,
            self.config.conditional_dim,
        )

    def zero_grad(self) -> None:
        for tensor in self.tensors.values():
            tensor.zero_grad()

    def requires_grad_(self, flag: bool = True) -> "ModelParams":
        for tensor in self.tensors.values():
            tensor.requires_grad = flag
        return self

    def arrays(self) -> Iterator[Tuple[str, np.ndarray]]:
        """Parameters then buffers, in a stable order"""
        for name, tensor in self.tensors.items():
            yield name, tensor.data
        for name, state in self.norm_states.items():
            yield f"{name}.running_mean", state.running_mean
            yield f"{name}.running_var", state.running_var

    @classmethod
    def from_arrays(cls, config: ArchitectureConfig, arrays: Dict[str, np.ndarray]) -> "ModelParams":
        template = build_model(config)
        missing = [name for name, _ in template.arrays() if name not in arrays]
        unexpected = sorted(set(arrays) - {name for name, _ in template.arrays()})
        if missing or unexpected:
            raise KeyError(f"parameter set mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, tensor in template.tensors.items():
            if arrays[name].shape != tensor.shape:
                raise ValueError(f"{name}: stored shape {arrays[name].shape}, config expects {tensor.shape}")
            template.tensors[name] = Tensor(arrays[name], requires_grad=True, dtype=arrays[name].dtype)
        for name, state in template.norm_states.items():
            state.running_mean = np.array(arrays[f"{name}.running_mean"])
            state.running_var = np.array(arrays[f"{name}.running_var"])
        return template

    def copy(self, dtype: Optional[np.dtype] = None) -> "ModelParams":
        """Deep copy, optionally cast (used for checkpoints and float32 inference)"""
        tensors = {
            name: Tensor(t.data.astype(t.dtype if dtype is None else dtype, copy=True), requires_grad=t.requires_grad)
            for name, t in self.tensors.items()
        }
        states = {
            name: BatchNormState(s.running_mean.copy(), s.running_var.copy(), s.momentum, s.eps)
            for name, s in self.norm_states.items()
        }
        return ModelParams(self.config, tensors, states)

    def equals(self, other: "ModelParams") -> bool:
        """Bit-exact equality of config, parameters and buffers"""
        if self.config != other.config:
            return False
        mine, theirs = dict(self.arrays()), dict(other.arrays())
        if mine.keys() != theirs.keys():
            return False
        return all(
            mine[k].dtype == theirs[k].dtype and mine[k].tobytes() == theirs[k].tobytes() for k in mine
        )


class _Initializer:
    """He-uniform weights from one seeded generator, drawn in declaration order"""

    def __init__(self, config: ArchitectureConfig):
        self.rng = np.random.default_rng(config.seed)
        self.params = ModelParams(config)

    def conv(self, name: str, out_channels: int, in_channels: int, kernel: int, bias: bool = False) -> None:
        fan_in = in_channels * kernel * kernel
        bound = np.sqrt(6.0 / fan_in)
        weight = self.rng.uniform(-bound, bound, (out_channels, in_channels, kernel, kernel))
        self.params.tensors[f"{name}.weight"] = Tensor(weight, requires_grad=True)
        if bias:
            self.params.tensors[f"{name}.bias"] = Tensor(np.zeros(out_channels), requires_grad=True)

    def norm(self, name: str, channels: int) -> None:
        self.params.tensors[f"{name}.gamma"] = Tensor(np.ones(channels), requires_grad=True)
        self.params.tensors[f"{name}.beta"] = Tensor(np.zeros(channels), requires_grad=True)
        if self.params.config.norm == "batch":
            self.params.norm_states[name] = BatchNormState.fresh(channels)

    def conv_norm(self, name: str, out_channels: int, in_channels: int, kernel: int) -> None:
        self.conv(f"{name}.conv", out_channels, in_channels, kernel)
        self.norm(f"{name}.norm", out_channels)

    def res_block(self, name: str, in_channels: int, out_channels: int) -> None:
        self.conv_norm(f"{name}.a", out_channels, in_channels, 3)
        self.conv_norm(f"{name}.b", out_channels, out_channels, 3)
        if in_channels != out_channels:
            self.conv(f"{name}.shortcut", out_channels, in_channels, 1)


def block_names(config: ArchitectureConfig) -> Tuple[List[str], List[str]]:
    levels = len(config.widths)
    return [f"enc{i}" for i in range(levels)], [f"dec{i}" for i in range(levels - 1)]


def build_model(config: ArchitectureConfig) -> ModelParams:
    """Fresh U-Net parameters; deterministic given config.seed"""
    init = _Initializer(config)
    widths = config.widths
    encoders, decoders = block_names(config)
    previous = config.in_channels
    for name, width in zip(encoders, widths):
        init.res_block(name, previous, width)
        previous = width
    for level in reversed(range(len(decoders))):
        init.res_block(decoders[level], widths[level + 1], widths[level])
    init.conv_norm("out", config.feature_dim, widths[0], 1)

    init.conv("head_s", 1, config.feature_dim, 1, bias=True)
    init.conv("head_p", config.positional_dim, config.feature_dim, 1, bias=True)
    if config.conditional_dim:
        init.conv("head_e", config.conditional_dim, config.feature_dim, 1, bias=True)

    phi_in = config.positional_dim + config.conditional_dim
    hidden = config.phi_hidden
    tensors = init.params.tensors
    tensors["phi.w1"] = Tensor(init.rng.uniform(-1, 1, (hidden, phi_in, 1, 1)) * np.sqrt(6.0 / phi_in), requires_grad=True)
    tensors["phi.b1"] = Tensor(np.zeros(hidden), requires_grad=True)
    tensors["phi.w2"] = Tensor(init.rng.uniform(-1, 1, (1, hidden, 1, 1)) * np.sqrt(6.0 / hidden), requires_grad=True)
    tensors["phi.b2"] = Tensor(np.full(1, PHI_OUTPUT_BIAS), requires_grad=True)

    logger.debug(f"built model: widths={list(widths)} params={init.params.n_parameters}")
    return init.params
