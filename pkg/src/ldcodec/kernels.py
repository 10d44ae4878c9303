"""1-D signal kernels shared by the encoder, decoder and quantizer.

A feature map is a plain ``(channels, frames)`` numpy array. Kernels keep
float64 inputs in float64 and compute everything else in float32, so the
runtime path is single precision while tests can evaluate in double.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateLengthError

__all__ = [
    "ConvSpec",
    "ActivationParams",
    "as_feature_map",
    "conv1d",
    "conv_transpose1d",
    "snake",
    "snake_beta",
    "tanh_out",
    "avg_pool",
    "repeat_frames",
    "mac_count",
    "conv_output_frames",
]


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    dilation: int = 1
    groups: int = 1
    transposed: bool = False

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_size", "stride", "dilation", "groups"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigurationError(f"ConvSpec.{name} must be a positive integer, got {value!r}")
        if int(self.padding) != self.padding or self.padding < 0:
            raise ConfigurationError(f"ConvSpec.padding must be non-negative, got {self.padding!r}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigurationError(
                f"channels ({self.in_channels}->{self.out_channels}) not divisible by groups={self.groups}"
            )

    @property
    def weight_shape(self):
        """Expected weight tensor shape for this layer."""
        if self.transposed:
            return (self.in_channels, self.out_channels // self.groups, self.kernel_size)
        return (self.out_channels, self.in_channels // self.groups, self.kernel_size)

    def output_frames(self, input_frames):
        return conv_output_frames(self, input_frames)


@dataclass(frozen=True)
class ActivationParams:
    """Per-channel SnakeBeta parameters (frequency ``alpha``, amplitude ``beta``)."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha))
        beta = np.atleast_1d(np.asarray(self.beta))
        if alpha.ndim != 1 or beta.shape != alpha.shape:
            raise ConfigurationError(f"alpha {alpha.shape} and beta {beta.shape} must be matching vectors")
        if not (np.all(alpha > 0) and np.all(beta > 0)):
            raise ConfigurationError("SnakeBeta alpha and beta must be strictly positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def ones(cls, channels):
        return cls(np.ones(channels, np.float32), np.ones(channels, np.float32))

    @property
    def channels(self):
        return self.alpha.shape[0]


def _float_dtype(x):
    return np.float64 if x.dtype == np.float64 else np.float32


def as_feature_map(x, channels=None):
    """Coerce ``x`` to a 2-D float feature map, optionally checking channels."""
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ConfigurationError(f"feature map must be 2-D (channels, frames), got shape {x.shape}")
    x = x.astype(_float_dtype(x), copy=False)
    if channels is not None and x.shape[0] != channels:
        raise ConfigurationError(f"expected {channels} channels, got {x.shape[0]}")
    return x


def conv_output_frames(spec, input_frames):
    if spec.transposed:
        return (
            (input_frames - 1) * spec.stride
            - 2 * spec.padding
            + spec.dilation * (spec.kernel_size - 1)
            + 1
        )
    span = spec.dilation * (spec.kernel_size - 1) + 1
    return (input_frames + 2 * spec.padding - span) // spec.stride + 1


def _check_weights(spec, weight, bias, dtype):
    weight = np.asarray(weight, dtype=dtype)
    if weight.shape != spec.weight_shape:
        raise ConfigurationError(f"weight shape {weight.shape} does not match {spec.weight_shape}")
    if bias is None:
        bias = np.zeros(spec.out_channels, dtype)
    bias = np.asarray(bias, dtype=dtype).reshape(-1)
    if bias.shape != (spec.out_channels,):
        raise ConfigurationError(f"bias must have {spec.out_channels} entries, got {bias.shape[0]}")
    return weight, bias


def conv1d(x, spec, weight, bias=None):
    """Grouped, dilated, strided cross-correlation with zero padding.

    Args:
        x: ``(in_channels, frames)`` input.
        spec: layer geometry; must not be transposed.
        weight: ``(out_channels, in_channels // groups, kernel_size)``.
        bias: ``(out_channels,)`` or None for zeros.

    Returns:
        ``(out_channels, out_frames)`` array.
    """
    if spec.transposed:
        raise ConfigurationError("conv1d called with a transposed ConvSpec")
    x = as_feature_map(x, spec.in_channels)
    dtype = x.dtype
    weight, bias = _check_weights(spec, weight, bias, dtype)
    frames_out = conv_output_frames(spec, x.shape[1])
    if frames_out <= 0:
        raise DegenerateLengthError(f"conv1d on {x.shape[1]} frames yields {frames_out} output frames")

    g, k = spec.groups, spec.kernel_size
    xp = np.pad(x, ((0, 0), (spec.padding, spec.padding)))
    cols = np.empty((spec.in_channels, k, frames_out), dtype)
    span = (frames_out - 1) * spec.stride + 1
    for tap in range(k):
        start = tap * spec.dilation
        cols[:, tap, :] = xp[:, start : start + span : spec.stride]
    cols = cols.reshape(g, (spec.in_channels // g) * k, frames_out)
    w = weight.reshape(g, spec.out_channels // g, (spec.in_channels // g) * k)
    out = np.matmul(w, cols).reshape(spec.out_channels, frames_out)
    out += bias[:, None]
    return out


def conv_transpose1d(x, spec, weight, bias=None):
    """Transposed (fractionally strided) grouped convolution.

    This is the linear adjoint of :func:`conv1d` for the same geometry and
    weight tensor, plus bias. Weight layout is
    ``(in_channels, out_channels // groups, kernel_size)``.
    """
    if not spec.transposed:
        raise ConfigurationError("conv_transpose1d needs a ConvSpec with transposed=True")
    x = as_feature_map(x, spec.in_channels)
    dtype = x.dtype
    weight, bias = _check_weights(spec, weight, bias, dtype)
    frames_in = x.shape[1]
    frames_out = conv_output_frames(spec, frames_in)
    if frames_out <= 0 or frames_in == 0:
        raise DegenerateLengthError(f"conv_transpose1d on {frames_in} frames yields {frames_out} output frames")

    g, k, s, d = spec.groups, spec.kernel_size, spec.stride, spec.dilation
    cin_g, cout_g = spec.in_channels // g, spec.out_channels // g
    w = weight.reshape(g, cin_g, cout_g * k).transpose(0, 2, 1)
    contrib = np.matmul(w, x.reshape(g, cin_g, frames_in)).reshape(spec.out_channels, k, frames_in)

    full = np.zeros((spec.out_channels, (frames_in - 1) * s + d * (k - 1) + 1), dtype)
    last = (frames_in - 1) * s + 1
    for tap in range(k):
        full[:, tap * d : tap * d + last : s] += contrib[:, tap, :]
    out = full[:, spec.padding : spec.padding + frames_out]
    out += bias[:, None]
    return out


def _positive_vector(value, channels, name, dtype):
    v = np.broadcast_to(np.asarray(value, dtype=dtype).reshape(-1), (channels,))
    if not np.all(v > 0):
        raise ConfigurationError(f"{name} must be strictly positive")
    return v[:, None]


def snake_beta(x, params):
    """x + (1/beta) * sin(alpha * x)**2, per channel."""
    x = as_feature_map(x)
    if params.channels not in (1, x.shape[0]):
        raise ConfigurationError(f"activation has {params.channels} channels, input has {x.shape[0]}")
    alpha = _positive_vector(params.alpha, x.shape[0], "alpha", x.dtype)
    beta = _positive_vector(params.beta, x.shape[0], "beta", x.dtype)
    return x + np.sin(alpha * x) ** 2 / beta


def snake(x, alpha):
    """Plain Snake: SnakeBeta with beta tied to alpha."""
    x = as_feature_map(x)
    a = _positive_vector(alpha, x.shape[0], "alpha", x.dtype)
    return x + np.sin(a * x) ** 2 / a


def tanh_out(x):
    return np.tanh(as_feature_map(x))


def avg_pool(x, window):
    """Non-overlapping mean over ``window`` frames. Frames must divide evenly."""
    x = as_feature_map(x)
    if window < 1:
        raise ConfigurationError(f"pooling window must be positive, got {window}")
    channels, frames = x.shape
    if frames % window:
        raise ConfigurationError(f"{frames} frames not divisible by pooling window {window}")
    return x.reshape(channels, frames // window, window).mean(axis=2, dtype=x.dtype)


def repeat_frames(x, factor):
    """Nearest-neighbour upsampling along frames."""
    return np.repeat(as_feature_map(x), factor, axis=1)


def mac_count(spec, input_frames):
    """Multiply-accumulates performed by one conv layer (bias excluded)."""
    if spec.transposed:
        return spec.in_channels * (spec.out_channels // spec.groups) * spec.kernel_size * input_frames
    frames_out = conv_output_frames(spec, input_frames)
    if frames_out <= 0:
        raise DegenerateLengthError(f"conv1d on {input_frames} frames yields {frames_out} output frames")
    return spec.out_channels * (spec.in_channels // spec.groups) * spec.kernel_size * frames_out
