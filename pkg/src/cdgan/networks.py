"""ResNet generator and PatchGAN discriminator built from declarative layer specs.

Layer codes follow the usual shorthand: ``C7S1_64`` is a 7x7 convolution with
64 filters and stride 1, ``DC3S2_128`` a 3x3 stride-1/2 (transposed)
convolution, ``RB256`` a residual block of two 3x3 convolutions.
"""

from __future__ import annotations

import enum
import hashlib
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from fractions import Fraction

import torch
import torch.nn.functional as F
from torch import nn

INIT_STD = 0.02
NORM_EPS = 1e-5


class LayerKind(enum.Enum):
    CONV = "conv"
    DECONV = "deconv"
    RESBLOCK = "resblock"


class Norm(enum.Enum):
    NONE = "none"
    INSTANCE = "instance"


class Activation(enum.Enum):
    RELU = "relu"
    LEAKY_RELU_0_2 = "leaky_relu_0.2"
    TANH = "tanh"
    NONE = "none"


class Padding(enum.Enum):
    REFLECT = "reflect"
    ZERO = "zero"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    kernel: int
    stride: Fraction
    filters: int
    norm: Norm = Norm.INSTANCE
    activation: Activation = Activation.RELU
    padding: Padding = Padding.ZERO

    def __post_init__(self):
        object.__setattr__(self, "stride", Fraction(self.stride))
        if self.kernel not in (3, 4, 7):
            raise ValueError(f"kernel must be 3, 4 or 7, got {self.kernel}")
        if self.filters < 1:
            raise ValueError(f"filters must be >= 1, got {self.filters}")
        if self.kind is LayerKind.DECONV:
            if self.stride.numerator != 1 or self.stride.denominator < 2:
                raise ValueError(f"deconvolution stride must be 1/n, got {self.stride}")
        elif self.stride.denominator != 1 or self.stride < 1:
            raise ValueError(f"{self.kind.value} stride must be a positive integer, got {self.stride}")

    @property
    def pad(self) -> int:
        # 4x4 PatchGAN kernels use p=1; odd kernels keep "same" geometry.
        return 1 if self.kernel == 4 else (self.kernel - 1) // 2

    @property
    def code(self) -> str:
        if self.kind is LayerKind.RESBLOCK:
            return f"RB{self.filters}"
        prefix = "DC" if self.kind is LayerKind.DECONV else "C"
        s = self.stride.denominator if self.kind is LayerKind.DECONV else self.stride.numerator
        return f"{prefix}{self.kernel}S{s}_{self.filters}"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "kernel": self.kernel,
            "stride": str(self.stride),
            "filters": self.filters,
            "norm": self.norm.value,
            "activation": self.activation.value,
            "padding": self.padding.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> LayerSpec:
        return cls(
            kind=LayerKind(d["kind"]),
            kernel=int(d["kernel"]),
            stride=Fraction(d["stride"]),
            filters=int(d["filters"]),
            norm=Norm(d["norm"]),
            activation=Activation(d["activation"]),
            padding=Padding(d["padding"]),
        )


def _codes(layers) -> list[str]:
    out: list[str] = []
    for layer in layers:
        if out and layer.kind is LayerKind.RESBLOCK and out[-1].startswith(layer.code):
            head, _, n = out[-1].partition("x")
            out[-1] = f"{head}x{int(n or 1) + 1}"
        else:
            out.append(layer.code)
    return out


@dataclass(frozen=True)
class GeneratorSpec:
    layers: tuple[LayerSpec, ...]
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("generator needs at least one layer")
        last = self.layers[-1]
        if last.filters != 3 or last.activation is not Activation.TANH:
            raise ValueError("generator must end in a 3-filter tanh layer")

    @classmethod
    def default(cls, width: int = 64, n_blocks: int = 9) -> GeneratorSpec:
        """C7S1_w, C3S2_2w, C3S2_4w, RB4w x n, DC3S2_2w, DC3S2_w, C7S1_3."""
        C, DC, RB = LayerKind.CONV, LayerKind.DECONV, LayerKind.RESBLOCK
        layers = [
            LayerSpec(C, 7, 1, width, padding=Padding.REFLECT),
            LayerSpec(C, 3, 2, 2 * width),
            LayerSpec(C, 3, 2, 4 * width),
            *[LayerSpec(RB, 3, 1, 4 * width) for _ in range(n_blocks)],
            LayerSpec(DC, 3, Fraction(1, 2), 2 * width),
            LayerSpec(DC, 3, Fraction(1, 2), width),
            LayerSpec(C, 7, 1, 3, norm=Norm.NONE, activation=Activation.TANH, padding=Padding.REFLECT),
        ]
        return cls(tuple(layers))

    @classmethod
    def test_profile(cls) -> GeneratorSpec:
        return cls.default(width=8, n_blocks=2)

    @property
    def codes(self) -> list[str]:
        return _codes(self.layers)

    @property
    def spatial_multiple(self) -> int:
        """Input H and W must be divisible by this for the output to match the input size."""
        m = 1
        for layer in self.layers:
            if layer.kind is LayerKind.CONV:
                m *= layer.stride.numerator
        return m

    def to_dict(self) -> dict:
        return {"in_channels": self.in_channels, "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> GeneratorSpec:
        return cls(tuple(LayerSpec.from_dict(l) for l in d["layers"]), int(d.get("in_channels", 3)))


@dataclass(frozen=True)
class DiscriminatorSpec:
    layers: tuple[LayerSpec, ...]
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for layer in self.layers:
            if layer.kind is not LayerKind.CONV:
                raise ValueError("discriminator layers must be plain convolutions")
        for layer in self.layers[:-1]:
            if layer.activation is not Activation.LEAKY_RELU_0_2:
                raise ValueError(f"hidden layer {layer.code} must use LeakyReLU(0.2)")

    @classmethod
    def default(cls, width: int = 64, fourth_stride: int = 1) -> DiscriminatorSpec:
        """70x70 PatchGAN; ``fourth_stride=2`` gives the literal all-stride-2 variant."""
        C, lr = LayerKind.CONV, Activation.LEAKY_RELU_0_2
        return cls((
            LayerSpec(C, 4, 2, width, norm=Norm.NONE, activation=lr),
            LayerSpec(C, 4, 2, 2 * width, activation=lr),
            LayerSpec(C, 4, 2, 4 * width, activation=lr),
            LayerSpec(C, 4, fourth_stride, 8 * width, activation=lr),
            LayerSpec(C, 4, 1, 1, norm=Norm.NONE, activation=Activation.NONE),
        ))

    @classmethod
    def test_profile(cls) -> DiscriminatorSpec:
        return cls.default(width=8)

    @property
    def codes(self) -> list[str]:
        return _codes(self.layers)

    def to_dict(self) -> dict:
        return {"in_channels": self.in_channels, "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> DiscriminatorSpec:
        return cls(tuple(LayerSpec.from_dict(l) for l in d["layers"]), int(d.get("in_channels", 3)))


def receptive_field(spec: DiscriminatorSpec) -> int:
    rf, jump = 1, 1
    for layer in spec.layers:
        rf += (layer.kernel - 1) * jump
        jump *= int(layer.stride)
    return rf


def patch_output_size(spec: DiscriminatorSpec, size: int) -> int:
    """Spatial size of the score map for a square-side input of ``size``."""
    for layer in spec.layers:
        size = (size + 2 * layer.pad - layer.kernel) // int(layer.stride) + 1
        if size < 1:
            return 0
    return size


def instance_normalize(x: torch.Tensor, eps: float = NORM_EPS, weight=None, bias=None) -> torch.Tensor:
    """Standardize each channel of each sample over its spatial positions.

    ``x`` is (N, C, H, W) or (C, H, W); variance is the biased estimator.
    ``weight``/``bias`` are optional per-channel affine parameters.
    """
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = (x - mean).pow(2).mean(dim=(2, 3), keepdim=True)
    out = (x - mean) / torch.sqrt(var + eps)
    if weight is not None:
        out = out * weight.view(1, -1, 1, 1)
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out.squeeze(0) if squeeze else out


class InstanceNorm(nn.Module):
    def __init__(self, channels: int, eps: float = NORM_EPS):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        return instance_normalize(x, self.eps, self.weight, self.bias)


class Deconv2d(nn.Module):
    """Transposed convolution whose weight is stored (out, in, k, k) like a convolution.

    Output padding is chosen so the spatial size grows by exactly the upsampling factor.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int, factor: int, pad: int):
        super().__init__()
        self.factor, self.pad = factor, pad
        self.output_padding = factor - kernel + 2 * pad
        if not 0 <= self.output_padding < factor:
            raise ValueError(f"cannot upsample by {factor} with kernel {kernel}, padding {pad}")
        self.weight = nn.Parameter(torch.empty(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))

    def forward(self, x):
        return F.conv_transpose2d(
            x, self.weight.transpose(0, 1), self.bias,
            stride=self.factor, padding=self.pad, output_padding=self.output_padding,
        )


def _activation(act: Activation) -> nn.Module:
    return {
        Activation.RELU: nn.ReLU(),
        Activation.LEAKY_RELU_0_2: nn.LeakyReLU(0.2),
        Activation.TANH: nn.Tanh(),
        Activation.NONE: nn.Identity(),
    }[act]


class ConvBlock(nn.Module):
    """Padding -> (de)convolution -> optional instance norm -> activation."""

    def __init__(self, spec: LayerSpec, in_ch: int, activation: Activation | None = None):
        super().__init__()
        if spec.kind is LayerKind.DECONV:
            self.pad = nn.Identity()
            self.conv = Deconv2d(in_ch, spec.filters, spec.kernel, spec.stride.denominator, spec.pad)
        else:
            if spec.padding is Padding.REFLECT:
                self.pad, conv_pad = nn.ReflectionPad2d(spec.pad), 0
            else:
                self.pad, conv_pad = nn.Identity(), spec.pad
            self.conv = nn.Conv2d(in_ch, spec.filters, spec.kernel, int(spec.stride), conv_pad)
        self.norm = InstanceNorm(spec.filters) if spec.norm is Norm.INSTANCE else nn.Identity()
        self.act = _activation(spec.activation if activation is None else activation)

    def forward(self, x):
        return self.act(self.norm(self.conv(self.pad(x))))


class ResidualBlock(nn.Module):
    """x + norm(conv(relu(norm(conv(x))))); no activation after the sum."""

    def __init__(self, spec: LayerSpec, channels: int):
        super().__init__()
        if spec.filters != channels:
            raise ValueError(f"residual block width {spec.filters} != incoming {channels} channels")
        inner = replace(spec, kind=LayerKind.CONV, stride=Fraction(1))
        self.first = ConvBlock(inner, channels)
        self.second = ConvBlock(inner, channels, activation=Activation.NONE)

    def forward(self, x):
        return x + self.second(self.first(x))


def _make_layers(layers, in_ch: int) -> nn.Sequential:
    modules, ch = [], in_ch
    for spec in layers:
        if spec.kind is LayerKind.RESBLOCK:
            modules.append(ResidualBlock(spec, ch))
        else:
            modules.append(ConvBlock(spec, ch))
        ch = spec.filters
    return nn.Sequential(*modules)


def _batched(forward):
    def wrapper(self, x):
        if x.dim() == 3:
            return forward(self, x.unsqueeze(0)).squeeze(0)
        return forward(self, x)
    return wrapper


class Generator(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        self.layers = _make_layers(spec.layers, spec.in_channels)

    @_batched
    def forward(self, x):
        m = self.spec.spatial_multiple
        h, w = x.shape[-2:]
        if h % m or w % m:
            raise ValueError(f"generator input {h}x{w} must have H and W divisible by {m}")
        return self.layers(x)


class Discriminator(nn.Module):
    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        self.layers = _make_layers(spec.layers, spec.in_channels)

    @_batched
    def forward(self, x):
        h, w = x.shape[-2:]
        if patch_output_size(self.spec, h) < 1 or patch_output_size(self.spec, w) < 1:
            raise ValueError(f"discriminator input {h}x{w} is too small for {self.spec.codes}")
        return self.layers(x)


class ParameterStore(Mapping):
    """Ordered name -> tensor view over a network's learnable parameters.

    Tensors are shared with the owning module, so in-place edits are visible
    to the forward pass.
    """

    def __init__(self, tensors):
        self._tensors = dict(tensors)

    @classmethod
    def from_module(cls, module: nn.Module) -> ParameterStore:
        return cls(module.named_parameters())

    def __getitem__(self, name):
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def conv_weights(self) -> dict[str, torch.Tensor]:
        return {k: v for k, v in self._tensors.items() if k.endswith("conv.weight")}

    def numel(self) -> int:
        return sum(t.numel() for t in self._tensors.values())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in self._tensors.items():
            h.update(name.encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()


@torch.no_grad()
def init_weights(store: ParameterStore, rng_seed: int) -> ParameterStore:
    """Conv weights ~ N(0, 0.02^2), norm scales 1, every bias / shift 0."""
    gen = torch.Generator().manual_seed(int(rng_seed))
    for name, t in store.items():
        if name.endswith("conv.weight"):
            t.copy_(torch.randn(t.shape, generator=gen, dtype=torch.float64) * INIT_STD)
        elif name.endswith("norm.weight"):
            t.fill_(1.0)
        elif name.endswith(".bias"):
            t.zero_()
        else:
            raise KeyError(f"no initialization rule for parameter {name!r}")
    return store


def build_generator(spec: GeneratorSpec | None = None, seed: int = 0):
    """Return ``(net, store)``; ``net`` is the callable forward pass."""
    net = Generator(spec or GeneratorSpec.default())
    store = init_weights(ParameterStore.from_module(net), seed)
    return net, store


def build_discriminator(spec: DiscriminatorSpec | None = None, seed: int = 0):
    net = Discriminator(spec or DiscriminatorSpec.default())
    store = init_weights(ParameterStore.from_module(net), seed)
    return net, store


@dataclass(frozen=True)
class NetworkSpecs:
    """Generator/discriminator specs shared by both translation directions."""

    generator: GeneratorSpec = field(default_factory=GeneratorSpec.default)
    discriminator: DiscriminatorSpec = field(default_factory=DiscriminatorSpec.default)

    @classmethod
    def for_profile(cls, profile: str) -> NetworkSpecs:
        profile = profile.lower()
        if profile == "full":
            return cls()
        if profile == "test":
            return cls(GeneratorSpec.test_profile(), DiscriminatorSpec.test_profile())
        raise ValueError(f"unknown network profile {profile!r} (expected 'full' or 'test')")
