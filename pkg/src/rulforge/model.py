"""Dilated-convolution network for dense per-timestep RUL regression.

Blocks of five dilated convs (dilations 1,2,4,8,16), each followed by
masked batchnorm, ReLU, and dropout, wrapped in a residual connection
with a 1x1 projection when channel counts differ. A per-timestep dense
head maps the final feature sequence to one RUL value per cycle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensorcore as tc
from .errors import ValidationError


@dataclass
class TcnConfig:
    in_features: int
    num_blocks: int = 4
    dilations: tuple[int, ...] = (1, 2, 4, 8, 16)
    kernel: int = 3
    channels: int = 200
    dropout: float = 0.3
    head_widths: tuple[int, ...] = (100, 50, 25, 10, 1)
    padding_mode: str = "causal_left"

    def validate(self) -> None:
        if self.in_features < 1:
            raise ValidationError(f"in_features must be >= 1, got {self.in_features}")
        if self.num_blocks < 1:
            raise ValidationError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if not self.dilations or any(d < 1 for d in self.dilations):
            raise ValidationError(f"dilations must be positive, got {self.dilations}")
        if self.kernel < 1:
            raise ValidationError(f"kernel must be >= 1, got {self.kernel}")
        if self.channels < 1:
            raise ValidationError(f"channels must be >= 1, got {self.channels}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if not self.head_widths or self.head_widths[-1] != 1:
            raise ValidationError(f"head must end in width 1, got {self.head_widths}")
        if self.padding_mode not in ("causal_left", "symmetric"):
            raise ValidationError(f"unknown padding_mode {self.padding_mode!r}")

    def to_dict(self) -> dict:
        return {
            "in_features": self.in_features,
            "num_blocks": self.num_blocks,
            "dilations": list(self.dilations),
            "kernel": self.kernel,
            "channels": self.channels,
            "dropout": self.dropout,
            "head_widths": list(self.head_widths),
            "padding_mode": self.padding_mode,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TcnConfig":
        cfg = cls(
            in_features=int(doc["in_features"]),
            num_blocks=int(doc["num_blocks"]),
            dilations=tuple(int(d) for d in doc["dilations"]),
            kernel=int(doc["kernel"]),
            channels=int(doc["channels"]),
            dropout=float(doc["dropout"]),
            head_widths=tuple(int(w) for w in doc["head_widths"]),
            padding_mode=str(doc["padding_mode"]),
        )
        cfg.validate()
        return cfg


def compute_receptive_field(config: TcnConfig) -> int:
    """Timesteps visible to one output position, padding mode irrelevant."""
    return 1 + config.num_blocks * (config.kernel - 1) * sum(config.dilations)


# Named configurations. The two larger ones differ only in depth and thus
# receptive field (249 vs 125); tiny is for tests and smoke runs.
PRESETS: dict[str, dict] = {
    "paper-4block": {},
    "paper-rf125": {"num_blocks": 2},
    "tiny": {
        "num_blocks": 1,
        "channels": 16,
        "dropout": 0.1,
        "head_widths": (64, 32, 16, 8, 1),
    },
}


def preset_config(name: str, in_features: int) -> TcnConfig:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
    cfg = TcnConfig(in_features=in_features, **PRESETS[name])
    cfg.validate()
    return cfg


class Param:
    """A trainable array with its gradient accumulator."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)


class Context:
    """Per-forward-pass state shared by all layers."""

    __slots__ = ("mask", "training", "rng")

    def __init__(self, mask: np.ndarray, training: bool, rng: np.random.Generator | None):
        self.mask = mask
        self.training = training
        self.rng = rng


class ConvLayer:
    def __init__(self, weight: Param, bias: Param, dilation: int, padding_mode: str):
        self.weight = weight
        self.bias = bias
        self.dilation = dilation
        self.padding_mode = padding_mode
        self._x: np.ndarray | None = None
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, ctx: Context) -> np.ndarray:
        self._x, self._mask = x, ctx.mask
        out = tc.conv1d_forward(
            x, self.weight.value, self.bias.value, self.dilation, self.padding_mode
        )
        return out * ctx.mask[:, None, :]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        grad = grad * self._mask[:, None, :]
        gx, gw, gb = tc.conv1d_backward(
            grad, self._x, self.weight.value, self.dilation, self.padding_mode, self._mask
        )
        self.weight.grad += gw
        self.bias.grad += gb
        return gx

    def params(self, prefix: str) -> list[tuple[str, Param]]:
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


class BatchNormLayer:
    def __init__(self, channels: int):
        self.gamma = Param(np.ones(channels))
        self.beta = Param(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self._cache: dict | None = None

    def forward(self, x: np.ndarray, ctx: Context) -> np.ndarray:
        out, self._cache = tc.batchnorm_forward(
            x,
            self.gamma.value,
            self.beta.value,
            self.running_mean,
            self.running_var,
            ctx.mask,
            ctx.training,
        )
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise ValidationError("batchnorm backward called without a training forward")
        gx, gg, gb = tc.batchnorm_backward(grad, self._cache)
        self.gamma.grad += gg
        self.beta.grad += gb
        return gx

    def params(self, prefix: str) -> list[tuple[str, Param]]:
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]

    def state(self, prefix: str) -> list[tuple[str, np.ndarray]]:
        return [
            (f"{prefix}.running_mean", self.running_mean),
            (f"{prefix}.running_var", self.running_var),
        ]


class ReluLayer:
    def __init__(self):
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, ctx: Context) -> np.ndarray:
        self._x = x
        return tc.relu_forward(x)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return tc.relu_backward(grad, self._x)


class DropoutLayer:
    def __init__(self, rate: float):
        self.rate = rate
        self._keep: np.ndarray | None = None

    def forward(self, x: np.ndarray, ctx: Context) -> np.ndarray:
        rng = ctx.rng if ctx.training else None
        out, self._keep = tc.dropout_forward(x, self.rate, rng, ctx.mask)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return tc.dropout_backward(grad, self._keep, self.rate)


class PointwiseLayer:
    def __init__(self, weight: Param, bias: Param):
        self.weight = weight
        self.bias = bias
        self._x: np.ndarray | None = None
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, ctx: Context) -> np.ndarray:
        self._x, self._mask = x, ctx.mask
        out = tc.pointwise_forward(x, self.weight.value, self.bias.value)
        return out * ctx.mask[:, None, :]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        grad = grad * self._mask[:, None, :]
        gx, gw, gb = tc.pointwise_backward(grad, self._x, self.weight.value, self._mask)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx

    def params(self, prefix: str) -> list[tuple[str, Param]]:
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


class ResidualBlock:
    """Dilated conv stack with an additive skip path, no post-add activation."""

    def __init__(
        self,
        in_channels: int,
        config: TcnConfig,
        rng: np.random.Generator,
    ):
        self.convs: list[ConvLayer] = []
        self.bns: list[BatchNormLayer] = []
        self.relus: list[ReluLayer] = []
        self.drops: list[DropoutLayer] = []
        c_in = in_channels
        for d in config.dilations:
            w = _uniform_init(rng, (config.channels, c_in, config.kernel), c_in * config.kernel)
            self.convs.append(
                ConvLayer(Param(w), Param(np.zeros(config.channels)), d, config.padding_mode)
            )
            self.bns.append(BatchNormLayer(config.channels))
            self.relus.append(ReluLayer())
            self.drops.append(DropoutLayer(config.dropout))
            c_in = config.channels
        self.skip: PointwiseLayer | None = None
        if in_channels != config.channels:
            w = _uniform_init(rng, (config.channels, in_channels), in_channels)
            self.skip = PointwiseLayer(Param(w), Param(np.zeros(config.channels)))

    def forward(self, x: np.ndarray, ctx: Context) -> np.ndarray:
        main = x
        for conv, bn, relu, drop in zip(self.convs, self.bns, self.relus, self.drops):
            main = conv.forward(main, ctx)
            main = bn.forward(main, ctx)
            main = relu.forward(main, ctx)
            main = drop.forward(main, ctx)
        shortcut = self.skip.forward(x, ctx) if self.skip is not None else x
        return main + shortcut

    def backward(self, grad: np.ndarray) -> np.ndarray:
        g = grad
        for conv, bn, relu, drop in zip(
            reversed(self.convs), reversed(self.bns), reversed(self.relus), reversed(self.drops)
        ):
            g = drop.backward(g)
            g = relu.backward(g)
            g = bn.backward(g)
            g = conv.backward(g)
        if self.skip is not None:
            g = g + self.skip.backward(grad)
        else:
            g = g + grad
        return g

    def params(self, prefix: str) -> list[tuple[str, Param]]:
        out = []
        for i, (conv, bn) in enumerate(zip(self.convs, self.bns)):
            out.extend(conv.params(f"{prefix}.conv{i}"))
            out.extend(bn.params(f"{prefix}.bn{i}"))
        if self.skip is not None:
            out.extend(self.skip.params(f"{prefix}.skip"))
        return out

    def state(self, prefix: str) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, bn in enumerate(self.bns):
            out.extend(bn.state(f"{prefix}.bn{i}"))
        return out


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class TcnModel:
    """The full network: residual blocks then a per-timestep dense head."""

    def __init__(self, config: TcnConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        self.blocks: list[ResidualBlock] = []
        c_in = config.in_features
        for _ in range(config.num_blocks):
            self.blocks.append(ResidualBlock(c_in, config, rng))
            c_in = config.channels
        self.head: list[PointwiseLayer] = []
        self.head_relus: list[ReluLayer] = []
        self.head_drops: list[DropoutLayer] = []
        for i, width in enumerate(config.head_widths):
            w = _uniform_init(rng, (width, c_in), c_in)
            self.head.append(PointwiseLayer(Param(w), Param(np.zeros(width))))
            if i < len(config.head_widths) - 1:
                self.head_relus.append(ReluLayer())
                self.head_drops.append(DropoutLayer(config.dropout))
            c_in = width

    @property
    def receptive_field(self) -> int:
        return compute_receptive_field(self.config)

    def forward(
        self,
        features: np.ndarray,
        mask: np.ndarray,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> np.ndarray:
        """features [B, F, L], mask [B, L] -> per-timestep predictions [B, L]."""
        if training and rng is None:
            raise ValidationError("training forward needs an rng for dropout")
        ctx = Context(mask, training, rng)
        h = features
        for block in self.blocks:
            h = block.forward(h, ctx)
        n_head = len(self.head)
        for i, layer in enumerate(self.head):
            h = layer.forward(h, ctx)
            if i < n_head - 1:
                h = self.head_relus[i].forward(h, ctx)
                h = self.head_drops[i].forward(h, ctx)
        return h[:, 0, :]

    def backward(self, grad_pred: np.ndarray) -> None:
        """Accumulate parameter gradients from dloss/dpred [B, L]."""
        g = grad_pred[:, None, :]
        n_head = len(self.head)
        for i in range(n_head - 1, -1, -1):
            if i < n_head - 1:
                g = self.head_drops[i].backward(g)
                g = self.head_relus[i].backward(g)
            g = self.head[i].backward(g)
        for block in reversed(self.blocks):
            g = block.backward(g)

    def zero_grad(self) -> None:
        for _, p in self.named_params().items():
            p.grad[...] = 0.0

    def named_params(self) -> dict[str, Param]:
        out: dict[str, Param] = {}
        for i, block in enumerate(self.blocks):
            for name, p in block.params(f"block{i}"):
                out[name] = p
        for i, layer in enumerate(self.head):
            for name, p in layer.params(f"head{i}"):
                out[name] = p
        return out

    def named_state(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, block in enumerate(self.blocks):
            for name, arr in block.state(f"block{i}"):
                out[name] = arr
        return out

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        own = self.named_state()
        for name, arr in state.items():
            if name not in own:
                raise ValidationError(f"unknown state entry {name!r}")
            own[name][...] = arr


def build_model(config: TcnConfig, rng: np.random.Generator) -> TcnModel:
    """Weights ~ U(+-sqrt(1/fan_in)), biases zero, BN gamma 1 and beta 0."""
    return TcnModel(config, rng)


def count_parameters(model: TcnModel) -> int:
    return sum(p.value.size for p in model.named_params().values())
