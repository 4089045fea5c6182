"""
U-Net backbone f, heads s/p/e and the instance head phi

Each block is convolution -> normalisation -> relu; encoder levels are
residual blocks separated by 2x2 max pooling, decoder levels upsample by
nearest neighbour and add the matching encoder output (summation, no
concatenation, no style vector). Inputs are reflect-padded at the bottom and
right to a multiple of 32 and the outputs cropped back.
"""
from dataclasses import dataclass
from typing import Literal, Optional, Tuple, Union

import numpy as np

from app.model.params import ModelParams, PhiWeights, block_names
from app.tensor import ops
from app.tensor.tensor import ShapeError, Tensor, no_grad
from app.utils.allocation import AllocationTracker

PAD_MULTIPLE = 32

Mode = Literal["train", "eval"]


@dataclass
class FeatureBundle:
    """Seed map S (H x W), positional P (D_p x H x W), conditional E (D_e x H x W), coordinates O"""

    S: Tensor
    P: Tensor
    E: Tensor
    O: Tensor

    @property
    def height(self) -> int:
        return self.S.shape[0]

    @property
    def width(self) -> int:
        return self.S.shape[1]

    def embedding(self) -> np.ndarray:
        """Q = P + O as a plain array"""
        return self.P.data + self.O.data.astype(self.P.dtype)


def coordinate_grid(height: int, width: int, positional_dim: int, dtype=np.float64) -> Tensor:
    if positional_dim < 2:
        raise ValueError(f"positional_dim must be >= 2, got {positional_dim}")
    grid = np.zeros((positional_dim, height, width), dtype=dtype)
    grid[0] = np.arange(height, dtype=dtype)[:, None]
    grid[1] = np.arange(width, dtype=dtype)[None, :]
    return Tensor(grid)


def padded_extent(extent: int, multiple: int = PAD_MULTIPLE) -> int:
    return extent + (-extent) % multiple


def _reflect_pad(x: np.ndarray, pad_h: int, pad_w: int) -> np.ndarray:
    for axis, pad in ((2, pad_h), (3, pad_w)):
        if pad:
            widths = [(0, 0)] * 4
            widths[axis] = (0, pad)
            x = np.pad(x, widths, mode="reflect" if x.shape[axis] > 1 else "edge")
    return x


class _Backbone:
    """One forward pass over a parameter set; holds the train/eval switch"""

    def __init__(self, params: ModelParams, training: bool):
        self.params = params
        self.config = params.config
        self.training = training

    def norm(self, x: Tensor, name: str) -> Tensor:
        gamma, beta = self.params[f"{name}.gamma"], self.params[f"{name}.beta"]
        if self.config.norm == "instance":
            return ops.instancenorm2d(x, gamma, beta)
        return ops.batchnorm2d(x, gamma, beta, self.params.norm_states[name], self.training)

    def conv_norm_relu(self, x: Tensor, name: str) -> Tensor:
        return ops.relu(self.norm(ops.conv2d(x, self.params[f"{name}.conv.weight"]), f"{name}.norm"))

    def res_block(self, x: Tensor, name: str) -> Tensor:
        h = self.conv_norm_relu(x, f"{name}.a")
        h = self.conv_norm_relu(h, f"{name}.b")
        shortcut = self.params.tensors.get(f"{name}.shortcut.weight")
        identity = x if shortcut is None else ops.conv2d(x, shortcut)
        return ops.add(h, identity)

    def head(self, features: Tensor, name: str) -> Tensor:
        return ops.conv2d(features, self.params[f"{name}.weight"], self.params[f"{name}.bias"])

    def __call__(self, x: Tensor) -> Tuple[Tensor, Tensor, Optional[Tensor]]:
        encoders, decoders = block_names(self.config)
        skips = []
        for level, name in enumerate(encoders):
            if level:
                x = ops.maxpool2x2(x)
            x = self.res_block(x, name)
            skips.append(x)
        for level in reversed(range(len(decoders))):
            x = ops.upsample_nearest2x(x)
            x = ops.add(self.res_block(x, decoders[level]), skips[level])
        features = self.conv_norm_relu(x, "out")
        s = ops.sigmoid(self.head(features, "head_s"))
        p = self.head(features, "head_p")
        e = self.head(features, "head_e") if self.config.conditional_dim else None
        return s, p, e


def forward_batch(
    X: Union[np.ndarray, Tensor], params: ModelParams, training: bool = False
) -> Tuple[Tensor, Tensor, Tensor]:
    """Run the network on N x C x H x W; returns S (N x H x W), P (N x D_p x H x W), E (N x D_e x H x W)"""
    data = X.data if isinstance(X, Tensor) else np.asarray(X)
    if data.ndim != 4:
        raise ShapeError(f"forward_batch: expected N x C x H x W, got {data.shape}")
    n, channels, height, width = data.shape
    config = params.config
    if channels != config.in_channels:
        raise ShapeError(f"model expects {config.in_channels} input channels, got {channels} ({data.shape})")
    multiple = max(PAD_MULTIPLE, config.downsampling)
    pad_h = padded_extent(height, multiple) - height
    pad_w = padded_extent(width, multiple) - width
    x = Tensor(_reflect_pad(data.astype(params.dtype, copy=False), pad_h, pad_w))

    s, p, e = _Backbone(params, training)(x)
    crop = (slice(None), slice(None), slice(0, height), slice(0, width))
    S = ops.index(s, (slice(None), 0, slice(0, height), slice(0, width)))
    P = ops.index(p, crop)
    E = ops.index(e, crop) if e is not None else Tensor(np.zeros((n, 0, height, width), dtype=params.dtype))
    return S, P, E


def bundle_at(S: Tensor, P: Tensor, E: Tensor, item: int, positional_dim: int) -> FeatureBundle:
    """FeatureBundle of one batch item, still attached to the batch graph"""
    height, width = S.shape[1:]
    return FeatureBundle(
        S=ops.index(S, item),
        P=ops.index(P, item),
        E=ops.index(E, item) if E.shape[1] else Tensor(np.zeros((0, height, width), dtype=E.dtype)),
        O=coordinate_grid(height, width, positional_dim, dtype=P.dtype),
    )


def forward(X: Union[np.ndarray, Tensor], params: ModelParams, mode: Mode = "eval") -> FeatureBundle:
    """C x H x W image -> FeatureBundle; eval mode records no graph and leaves running stats alone"""
    data = X.data if isinstance(X, Tensor) else np.asarray(X)
    if data.ndim != 3:
        raise ShapeError(f"forward: expected C x H x W, got {data.shape}")
    if mode == "eval":
        with no_grad():
            S, P, E = forward_batch(data[None], params, training=False)
    else:
        S, P, E = forward_batch(data[None], params, training=True)
    return bundle_at(S, P, E, 0, params.config.positional_dim)


def phi_forward(
    offsets: Tensor,
    E_crop: Tensor,
    phi: Union[PhiWeights, ModelParams],
    tracker: Optional[AllocationTracker] = None,
) -> Tensor:
    """Per-pixel logits of the instance head

    offsets are (P+O)_crop - (P+O)[seed], D_p x h x w, or N x D_p x h x w for a
    batch of equally shaped windows; E_crop matches with D_e channels.
    Returns h x w (or N x h x w) logits.
    """
    if isinstance(phi, ModelParams):
        phi = phi.phi
    single = offsets.ndim == 3
    if single:
        offsets = ops.reshape(offsets, (1,) + offsets.shape)
        E_crop = ops.reshape(E_crop, (1,) + E_crop.shape)
    if offsets.ndim != 4 or offsets.shape[1] != phi.positional_dim:
        raise ShapeError(f"phi_forward: offsets {offsets.shape} need {phi.positional_dim} channels")
    if E_crop.ndim != 4 or E_crop.shape[1] != phi.conditional_dim or E_crop.shape[2:] != offsets.shape[2:]:
        raise ShapeError(
            f"phi_forward: conditional crop {E_crop.shape} does not match {phi.conditional_dim} channels "
            f"over offsets {offsets.shape}"
        )
    x = ops.concat([offsets, E_crop], axis=1) if phi.conditional_dim else offsets
    if tracker is not None:
        tracker.allocate("phi.input", x.data)
    preact = ops.conv2d(x, phi.w1, phi.b1)
    if tracker is not None:
        tracker.allocate("phi.preact", preact.data)
    hidden = ops.relu(preact)
    if tracker is not None:
        tracker.allocate("phi.hidden", hidden.data)
        tracker.free("phi.preact")
    logits = ops.index(ops.conv2d(hidden, phi.w2, phi.b2), (slice(None), 0))
    if tracker is not None:
        tracker.allocate("phi.logits", logits.data)
        for name in ("phi.input", "phi.hidden"):
            tracker.free(name)
    return ops.index(logits, 0) if single else logits
