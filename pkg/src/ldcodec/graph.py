"""Encoder/decoder graphs built from :mod:`ldcodec.kernels`.

The decoder is the low-complexity one: an input conv, four upsampling
blocks (SnakeBeta, transposed conv, three expand/shrink residual units) and
a tanh output conv. The encoder is a strided stack of Snake residual
blocks with strided downsampling.

Weights live in a flat ``{path: ndarray}`` map. Every layer a spec needs is
enumerated by :func:`decoder_tensor_shapes` / :func:`encoder_tensor_shapes`,
which drive validation, random initialisation and the forward pass alike.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, WeightValidationError
from .kernels import (
    ActivationParams,
    ConvSpec,
    as_feature_map,
    conv1d,
    conv_transpose1d,
    mac_count,
    snake,
    snake_beta,
    tanh_out,
)

__all__ = [
    "ResidualUnitSpec",
    "DecoderSpec",
    "EncoderSpec",
    "ModelConfig",
    "ModelWeights",
    "Decoder",
    "Encoder",
    "LayerCost",
    "ComplexityReport",
    "build_decoder",
    "build_encoder",
    "residual_unit_forward",
    "decode_features",
    "encode_features",
    "complexity_report",
    "init_weights",
    "pad_to_multiple",
    "decoder_tensor_shapes",
    "encoder_tensor_shapes",
]


@dataclass(frozen=True)
class ResidualUnitSpec:
    channels: int
    dilation: int
    expand_ratio: int = 2
    groups: int = 1

    def __post_init__(self):
        if self.expand_ratio < 1:
            raise ConfigurationError(f"expand_ratio must be >= 1, got {self.expand_ratio}")
        if self.dilation < 1:
            raise ConfigurationError(f"dilation must be >= 1, got {self.dilation}")

    @property
    def expand(self):
        # kernel 3, "same" padding so frame count is preserved
        return ConvSpec(
            self.channels,
            self.channels * self.expand_ratio,
            kernel_size=3,
            padding=self.dilation,
            dilation=self.dilation,
            groups=self.groups,
        )

    @property
    def shrink(self):
        return ConvSpec(self.channels * self.expand_ratio, self.channels, kernel_size=1, groups=self.groups)


@dataclass(frozen=True)
class DecoderSpec:
    latent_dim: int
    initial_channels: int
    upsample_factors: tuple = (8, 5, 4, 2)
    dilations: tuple = (1, 3, 9)
    groups: int = 1
    expand_ratio: int = 2
    input_kernel: int = 7
    output_kernel: int = 7
    output_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "upsample_factors", tuple(int(r) for r in self.upsample_factors))
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.latent_dim < 1 or self.initial_channels < 1:
            raise ConfigurationError("latent_dim and initial_channels must be positive")
        if not self.upsample_factors or any(r < 1 for r in self.upsample_factors):
            raise ConfigurationError(f"bad upsample_factors {self.upsample_factors}")
        if self.output_channels != 1:
            raise ConfigurationError("decoder output must be mono (output_channels = 1)")
        for k in range(len(self.upsample_factors) + 1):
            width, rem = divmod(self.initial_channels, 2**k)
            if rem or width < 1:
                raise ConfigurationError(
                    f"initial_channels={self.initial_channels} cannot be halved {k} times"
                )
            if k and width % self.groups:
                raise ConfigurationError(f"block {k - 1} width {width} not divisible by groups={self.groups}")
        if self.initial_channels % self.groups:
            raise ConfigurationError(f"initial_channels not divisible by groups={self.groups}")

    @property
    def hop_length(self):
        return math.prod(self.upsample_factors)

    def channels(self, block):
        """Channel width after ``block`` halvings (0 = input conv output)."""
        return self.initial_channels // 2**block


@dataclass(frozen=True)
class EncoderSpec:
    latent_dim: int
    base_channels: int = 16
    strides: tuple = (2, 4, 5, 8)
    dilations: tuple = (1, 3, 9)
    input_kernel: int = 7
    residual_kernel: int = 7
    output_kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.latent_dim < 1 or self.base_channels < 1:
            raise ConfigurationError("latent_dim and base_channels must be positive")
        if not self.strides or any(s < 1 for s in self.strides):
            raise ConfigurationError(f"bad strides {self.strides}")

    @property
    def hop_length(self):
        return math.prod(self.strides)

    def channels(self, block):
        return self.base_channels * 2**block


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderSpec
    decoder: DecoderSpec
    sample_rate: int = 16000

    def __post_init__(self):
        if self.encoder.hop_length != self.decoder.hop_length:
            raise ConfigurationError(
                f"encoder stride product {self.encoder.hop_length} != "
                f"decoder upsample product {self.decoder.hop_length}"
            )
        if self.encoder.latent_dim != self.decoder.latent_dim:
            raise ConfigurationError("encoder and decoder latent_dim differ")
        if self.sample_rate <= 0:
            raise ConfigurationError("sample_rate must be positive")

    @property
    def hop_length(self):
        return self.decoder.hop_length

    @property
    def latent_dim(self):
        return self.decoder.latent_dim

    @property
    def frame_rate(self):
        return self.sample_rate / self.hop_length


@dataclass
class ModelWeights:
    """Named tensors plus the activation-parameter storage convention.

    With ``log_scale_activations`` set, every ``*.alpha``/``*.beta`` tensor
    holds log values and is exponentiated when a graph is built.
    """

    tensors: dict = field(default_factory=dict)
    log_scale_activations: bool = False

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __len__(self):
        return len(self.tensors)

    def with_prefix(self, prefix):
        return {k: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def update(self, other):
        if isinstance(other, ModelWeights):
            if other.log_scale_activations != self.log_scale_activations and any(
                _is_activation(k) for k in other.tensors
            ):
                raise ConfigurationError("cannot merge weights with different activation conventions")
            other = other.tensors
        self.tensors.update(other)
        return self

    def resolved(self, prefix):
        """Plain-scale float32 copies of every tensor under ``prefix``."""
        out = {}
        for name, value in self.with_prefix(prefix).items():
            arr = np.array(value, dtype=np.float32)
            if self.log_scale_activations and _is_activation(name):
                arr = np.exp(arr)
            arr.setflags(write=False)
            out[name] = arr
        return out


def _is_activation(name):
    return name.endswith(".alpha") or name.endswith(".beta")


def _conv_entries(path, spec):
    return {f"{path}.weight": spec.weight_shape, f"{path}.bias": (spec.out_channels,)}


def _decoder_layers(spec):
    """Conv layers in execution order: (path, ConvSpec, frames-per-latent-frame)."""
    layers = [
        (
            "decoder.input",
            ConvSpec(spec.latent_dim, spec.initial_channels, spec.input_kernel, padding=spec.input_kernel // 2),
            1,
        )
    ]
    scale = 1
    for k, r in enumerate(spec.upsample_factors):
        c_in, c_out = spec.channels(k), spec.channels(k + 1)
        up = ConvSpec(c_in, c_out, 2 * r, stride=r, padding=r // 2, groups=spec.groups, transposed=True)
        layers.append((f"decoder.block{k}.upsample", up, scale))
        scale *= r
        for j, d in enumerate(spec.dilations):
            unit = ResidualUnitSpec(c_out, d, spec.expand_ratio, spec.groups)
            layers.append((f"decoder.block{k}.res{j}.expand", unit.expand, scale))
            layers.append((f"decoder.block{k}.res{j}.shrink", unit.shrink, scale))
    c_last = spec.channels(len(spec.upsample_factors))
    layers.append(
        (
            "decoder.output",
            ConvSpec(c_last, spec.output_channels, spec.output_kernel, padding=spec.output_kernel // 2),
            scale,
        )
    )
    return layers


def decoder_tensor_shapes(spec):
    shapes = {}
    for path, conv, _ in _decoder_layers(spec):
        shapes.update(_conv_entries(path, conv))
    for k in range(len(spec.upsample_factors)):
        c_in, c_out = spec.channels(k), spec.channels(k + 1)
        shapes[f"decoder.block{k}.act.alpha"] = shapes[f"decoder.block{k}.act.beta"] = (c_in,)
        for j in range(len(spec.dilations)):
            act = f"decoder.block{k}.res{j}.act"
            shapes[f"{act}.alpha"] = shapes[f"{act}.beta"] = (c_out * spec.expand_ratio,)
    c_last = spec.channels(len(spec.upsample_factors))
    shapes["decoder.output_act.alpha"] = shapes["decoder.output_act.beta"] = (c_last,)
    return shapes


def _encoder_layers(spec):
    layers = [("encoder.input", ConvSpec(1, spec.base_channels, spec.input_kernel, padding=spec.input_kernel // 2))]
    for k, s in enumerate(spec.strides):
        c = spec.channels(k)
        for j, d in enumerate(spec.dilations):
            pad = d * (spec.residual_kernel - 1) // 2
            layers.append(
                (f"encoder.block{k}.res{j}.conv1", ConvSpec(c, c, spec.residual_kernel, padding=pad, dilation=d))
            )
            layers.append((f"encoder.block{k}.res{j}.conv2", ConvSpec(c, c, 1)))
        layers.append(
            (f"encoder.block{k}.downsample", ConvSpec(c, 2 * c, 2 * s, stride=s, padding=math.ceil(s / 2)))
        )
    c_last = spec.channels(len(spec.strides))
    layers.append(
        ("encoder.output", ConvSpec(c_last, spec.latent_dim, spec.output_kernel, padding=spec.output_kernel // 2))
    )
    return layers


def encoder_tensor_shapes(spec):
    shapes = {}
    for path, conv in _encoder_layers(spec):
        shapes.update(_conv_entries(path, conv))
    for k in range(len(spec.strides)):
        c = spec.channels(k)
        for j in range(len(spec.dilations)):
            shapes[f"encoder.block{k}.res{j}.act1.alpha"] = (c,)
            shapes[f"encoder.block{k}.res{j}.act2.alpha"] = (c,)
        shapes[f"encoder.block{k}.act.alpha"] = (c,)
    shapes["encoder.output_act.alpha"] = (spec.channels(len(spec.strides)),)
    return shapes


def _validate(weights, shapes, prefix):
    if not isinstance(weights, ModelWeights):
        weights = ModelWeights(dict(weights))
    present = weights.with_prefix(prefix)
    for name, shape in shapes.items():
        if name not in present:
            raise WeightValidationError(f"missing tensor {name!r} (expected shape {shape})", name)
        got = tuple(np.shape(present[name]))
        if got != tuple(shape):
            raise WeightValidationError(f"tensor {name!r} has shape {got}, expected {tuple(shape)}", name)
    for name in present:
        if name not in shapes:
            raise WeightValidationError(f"unexpected tensor {name!r}", name)
    resolved = weights.resolved(prefix)
    for name, value in resolved.items():
        if not np.all(np.isfinite(value)):
            raise WeightValidationError(f"tensor {name!r} contains non-finite values", name)
        if _is_activation(name) and not np.all(value > 0):
            raise WeightValidationError(f"activation parameter {name!r} must be positive", name)
    return resolved


def _conv(x, tensors, path, spec):
    fn = conv_transpose1d if spec.transposed else conv1d
    return fn(x, spec, tensors[f"{path}.weight"], tensors[f"{path}.bias"])


def _act(tensors, path):
    return ActivationParams(tensors[f"{path}.alpha"], tensors[f"{path}.beta"])


def residual_unit_forward(x, unit, weights, prefix=""):
    """y = x + shrink(SnakeBeta(expand(x))).

    ``weights`` maps ``prefix + "expand.weight"``, ``"expand.bias"``,
    ``"act.alpha"``, ``"act.beta"``, ``"shrink.weight"`` and
    ``"shrink.bias"`` to plain-scale arrays.
    """
    x = as_feature_map(x, unit.channels)
    h = _conv(x, weights, prefix + "expand", unit.expand)
    h = snake_beta(h, _act(weights, prefix + "act"))
    return x + _conv(h, weights, prefix + "shrink", unit.shrink)


class Decoder:
    """Immutable executable decoder graph; safe to share across threads."""

    def __init__(self, spec, tensors):
        self.spec = spec
        self._tensors = tensors
        self._layers = _decoder_layers(spec)

    @property
    def latent_dim(self):
        return self.spec.latent_dim

    @property
    def hop_length(self):
        return self.spec.hop_length

    def conv_layers(self):
        return list(self._layers)

    def __call__(self, x_hat):
        return decode_features(self, x_hat)

    def forward(self, x_hat):
        spec, t = self.spec, self._tensors
        x = as_feature_map(x_hat, spec.latent_dim).astype(np.float32, copy=False)
        frames = x.shape[1]
        layers = iter(self._layers)
        path, conv, _ = next(layers)
        x = _conv(x, t, path, conv)
        for k, r in enumerate(spec.upsample_factors):
            x = snake_beta(x, _act(t, f"decoder.block{k}.act"))
            path, conv, _ = next(layers)
            x = _conv(x, t, path, conv)
            frames *= r
            # odd factors overshoot by one frame with padding r // 2
            x = x[:, :frames]
            assert x.shape[0] == spec.channels(k + 1)
            for j, d in enumerate(spec.dilations):
                unit = ResidualUnitSpec(spec.channels(k + 1), d, spec.expand_ratio, spec.groups)
                x = residual_unit_forward(x, unit, t, f"decoder.block{k}.res{j}.")
                next(layers), next(layers)
        x = snake_beta(x, _act(t, "decoder.output_act"))
        path, conv, _ = next(layers)
        return tanh_out(_conv(x, t, path, conv))[0]


class Encoder:
    """Waveform encoder: Snake residual blocks between strided downsampling convs."""

    def __init__(self, spec, tensors):
        self.spec = spec
        self._tensors = tensors
        self._layers = dict(_encoder_layers(spec))

    @property
    def hop_length(self):
        return self.spec.hop_length

    def __call__(self, waveform):
        return encode_features(self, waveform)

    def forward(self, waveform):
        spec, t, layers = self.spec, self._tensors, self._layers
        x = as_feature_map(np.asarray(waveform, dtype=np.float32).reshape(1, -1), 1)
        x = _conv(x, t, "encoder.input", layers["encoder.input"])
        for k in range(len(spec.strides)):
            for j in range(len(spec.dilations)):
                p = f"encoder.block{k}.res{j}"
                h = snake(x, t[f"{p}.act1.alpha"])
                h = _conv(h, t, f"{p}.conv1", layers[f"{p}.conv1"])
                h = snake(h, t[f"{p}.act2.alpha"])
                x = x + _conv(h, t, f"{p}.conv2", layers[f"{p}.conv2"])
            x = snake(x, t[f"encoder.block{k}.act.alpha"])
            p = f"encoder.block{k}.downsample"
            x = _conv(x, t, p, layers[p])
        x = snake(x, t["encoder.output_act.alpha"])
        return _conv(x, t, "encoder.output", layers["encoder.output"])


def build_decoder(spec, weights):
    """Validate ``weights`` against ``spec`` and return a :class:`Decoder`.

    Raises:
        WeightValidationError: a ``decoder.*`` tensor is missing, unexpected,
            mis-shaped, non-finite, or an activation parameter is not positive.
    """
    return Decoder(spec, _validate(weights, decoder_tensor_shapes(spec), "decoder."))


def build_encoder(spec, weights):
    return Encoder(spec, _validate(weights, encoder_tensor_shapes(spec), "encoder."))


def decode_features(decoder, x_hat):
    """Latent frames -> mono waveform with ``frames * hop_length`` samples in (-1, 1)."""
    x_hat = as_feature_map(x_hat)
    if x_hat.shape[0] != decoder.latent_dim:
        raise ConfigurationError(f"decoder expects {decoder.latent_dim} latent channels, got {x_hat.shape[0]}")
    return decoder.forward(x_hat)


def encode_features(encoder, waveform):
    waveform = np.asarray(waveform, dtype=np.float32).reshape(-1)
    if waveform.size == 0 or waveform.size % encoder.hop_length:
        raise ConfigurationError(
            f"{waveform.size} samples is not a positive multiple of the hop length {encoder.hop_length}; "
            "zero-pad the tail first"
        )
    return encoder.forward(waveform)


def pad_to_multiple(waveform, multiple):
    """Zero-pad a 1-D signal to the next multiple of ``multiple`` samples."""
    waveform = np.asarray(waveform).reshape(-1)
    extra = -waveform.size % multiple
    if waveform.size == 0:
        extra = multiple
    return np.pad(waveform, (0, extra))


@dataclass(frozen=True)
class LayerCost:
    path: str
    spec: ConvSpec
    input_frames: float
    macs: float


@dataclass(frozen=True)
class ComplexityReport:
    layers: tuple
    seconds: float

    @property
    def total_macs(self):
        return sum(row.macs for row in self.layers)

    @property
    def gmacs(self):
        return self.total_macs / 1e9

    @property
    def gmacs_per_second(self):
        return self.gmacs / self.seconds

    def to_text(self, per_layer=False):
        lines = []
        if per_layer:
            for row in self.layers:
                lines.append(f"{row.path}: {row.macs:.0f}")
        lines.append(f"seconds: {self.seconds:g}")
        lines.append(f"total_macs: {self.total_macs:.0f}")
        lines.append(f"gmacs: {self.gmacs:.6f}")
        lines.append(f"gmacs_per_second: {self.gmacs_per_second:.6f}")
        return "\n".join(lines)


def complexity_report(decoder, seconds=1.0, sample_rate=16000):
    """Per-layer multiply-accumulate counts for decoding ``seconds`` of audio.

    Every decoder conv is length preserving or an exact upsampler, so MACs
    are linear in the latent frame count; frame counts that are not whole
    numbers are accounted fractionally.
    """
    if seconds <= 0:
        raise ConfigurationError("seconds must be positive")
    spec = decoder.spec if isinstance(decoder, Decoder) else decoder
    frames = seconds * sample_rate / spec.hop_length
    if float(frames).is_integer():
        frames = int(frames)
    rows = []
    for path, conv, scale in _decoder_layers(spec):
        per_frame = mac_count(conv, scale)
        rows.append(LayerCost(path, conv, scale * frames, per_frame * frames))
    return ComplexityReport(tuple(rows), seconds)


def init_weights(config, seed=0, scale=1.0):
    """Random fan-in scaled weights for the encoder and decoder of ``config``.

    Biases are zero and all activation parameters are 1.0.
    """
    rng = np.random.default_rng(seed)
    layers = [(p, c) for p, c, _ in _decoder_layers(config.decoder)] + _encoder_layers(config.encoder)
    convs = dict(layers)
    shapes = {**encoder_tensor_shapes(config.encoder), **decoder_tensor_shapes(config.decoder)}
    tensors = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if _is_activation(name):
            tensors[name] = np.ones(shape, np.float32)
        elif name.endswith(".bias"):
            tensors[name] = np.zeros(shape, np.float32)
        else:
            conv = convs[name[: -len(".weight")]]
            fan_in = shape[1] * shape[2] if not conv.transposed else conv.in_channels // conv.groups * shape[2] / conv.stride
            std = scale / math.sqrt(fan_in)
            if name.endswith(("shrink.weight", "conv2.weight")):
                # keep untrained residual branches small so activations stay bounded
                std *= 0.1
            tensors[name] = (rng.standard_normal(shape) * std).astype(np.float32)
    return ModelWeights(tensors)
