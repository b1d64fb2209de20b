"""Small residual CNN that exposes one feature tap per stage."""

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .engine import Tensor, batch_norm, conv2d, global_avg_pool, linear, relu


@dataclass(frozen=True)
class BackboneConfig:
    block_channel_widths: Tuple[int, ...] = (16, 32, 64)
    blocks_per_stage: int = 2
    embedding_dim: int = 128
    input_size: int = 32
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "block_channel_widths", tuple(int(w) for w in self.block_channel_widths))
        self.validate()

    def validate(self) -> None:
        widths = self.block_channel_widths
        if len(widths) < 2:
            raise ValueError("need at least 2 stages (feature taps)")
        if any(w < 1 for w in widths):
            raise ValueError(f"channel widths must be positive, got {widths}")
        if self.blocks_per_stage < 1:
            raise ValueError("blocks_per_stage must be positive")
        if self.embedding_dim < 8:
            raise ValueError("embedding_dim must be at least 8")
        if self.in_channels < 1:
            raise ValueError("in_channels must be positive")
        if self.input_size < 1 or self.input_size % (2 ** len(widths)):
            raise ValueError(
                f"input_size {self.input_size} must be divisible by 2**{len(widths)} for the stride-2 stages"
            )

    @property
    def num_taps(self) -> int:
        return len(self.block_channel_widths)

    def tap_shapes(self) -> List[Tuple[int, int, int]]:
        size = self.input_size
        shapes = []
        for w in self.block_channel_widths:
            size //= 2
            shapes.append((w, size, size))
        return shapes


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class BatchNorm:
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var, training, self.momentum, self.eps
        )


class ConvBN:
    def __init__(self, rng, cin: int, cout: int, k: int, stride: int):
        self.kernel = Tensor(kaiming_uniform(rng, (cout, cin, k, k), cin * k * k), requires_grad=True)
        self.bn = BatchNorm(cout)
        self.stride = stride
        self.padding = k // 2

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.bn(conv2d(x, self.kernel, self.stride, self.padding), training)


class ResidualBlock:
    """conv-BN-ReLU, conv-BN, add the shortcut, ReLU.

    The shortcut is the identity unless the block changes resolution or
    width, in which case a strided 1x1 conv-BN projection is used.
    """

    def __init__(self, rng, cin: int, cout: int, stride: int):
        self.conv1 = ConvBN(rng, cin, cout, 3, stride)
        self.conv2 = ConvBN(rng, cout, cout, 3, 1)
        self.shortcut = ConvBN(rng, cin, cout, 1, stride) if (stride != 1 or cin != cout) else None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = relu(self.conv1(x, training))
        h = self.conv2(h, training)
        sc = x if self.shortcut is None else self.shortcut(x, training)
        return relu(h + sc)


def _named_modules(obj, prefix: str):
    if isinstance(obj, (ConvBN, BatchNorm, ResidualBlock)):
        for name, child in vars(obj).items():
            yield from _named_modules(child, f"{prefix}{name}.")
    elif isinstance(obj, list):
        for i, child in enumerate(obj):
            yield from _named_modules(child, f"{prefix}{i}.")
    elif isinstance(obj, Tensor):
        yield prefix[:-1], obj
    elif isinstance(obj, np.ndarray):
        yield prefix[:-1], obj


@dataclass
class Backbone:
    """Stem, stride-2 residual stages and a linear embedding layer.

    ``forward_with_taps`` returns the embedding together with the output of
    every stage (post-activation), in stage order.
    """

    config: BackboneConfig
    seed: int = 0
    stem: ConvBN = field(init=False, repr=False)
    stages: List[List[ResidualBlock]] = field(init=False, repr=False)
    fc: Tensor = field(init=False, repr=False)
    fc_bn: BatchNorm = field(init=False, repr=False)

    def __post_init__(self):
        cfg = self.config
        rng = np.random.default_rng(self.seed)
        widths = cfg.block_channel_widths
        self.stem = ConvBN(rng, cfg.in_channels, widths[0], 3, 1)
        self.stages = []
        cin = widths[0]
        for w in widths:
            blocks = [ResidualBlock(rng, cin, w, 2)]
            blocks += [ResidualBlock(rng, w, w, 1) for _ in range(cfg.blocks_per_stage - 1)]
            self.stages.append(blocks)
            cin = w
        self.fc = Tensor(kaiming_uniform(rng, (cin, cfg.embedding_dim), cin), requires_grad=True)
        self.fc_bn = BatchNorm(cfg.embedding_dim)

    def _tree(self):
        return [("stem", self.stem), ("stages", self.stages), ("fc_bn", self.fc_bn)]

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        out = OrderedDict()
        for root, obj in self._tree():
            for name, t in _named_modules(obj, root + "."):
                if isinstance(t, Tensor):
                    out[name] = t
        out["fc"] = self.fc
        return out

    def named_buffers(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for root, obj in self._tree():
            for name, arr in _named_modules(obj, root + "."):
                if isinstance(arr, np.ndarray):
                    out[name] = arr
        return out

    def parameters(self) -> List[Tensor]:
        return list(self.named_parameters().values())

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_arrays(self) -> Dict[str, np.ndarray]:
        state = {f"param.{k}": v.data for k, v in self.named_parameters().items()}
        state.update({f"buffer.{k}": v for k, v in self.named_buffers().items()})
        return state

    def load_state_arrays(self, state: Dict[str, np.ndarray]) -> None:
        for k, p in self.named_parameters().items():
            arr = np.asarray(state[f"param.{k}"], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()
        for k, b in self.named_buffers().items():
            b[...] = state[f"buffer.{k}"]

    def forward_with_taps(self, batch, training: bool = False) -> Tuple[Tensor, List[Tensor]]:
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        cfg = self.config
        expected = (cfg.in_channels, cfg.input_size, cfg.input_size)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ValueError(f"backbone expects N x {expected[0]} x {expected[1]} x {expected[2]}, got {x.shape}")
        h = relu(self.stem(x, training))
        taps = []
        for blocks in self.stages:
            for block in blocks:
                h = block(h, training)
            taps.append(h)
        emb = self.fc_bn(linear(global_avg_pool(h), self.fc), training)
        return emb, taps

    def embed(self, batch) -> np.ndarray:
        emb, _ = self.forward_with_taps(batch, training=False)
        return emb.data


def build_backbone(config: BackboneConfig, seed: int = 0) -> Backbone:
    config.validate()
    return Backbone(config, seed)
