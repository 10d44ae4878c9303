"""Serialization: LDCW weight files, LDCB bitstreams and config text.

LDCW layout (all integers little-endian)::

    "LDCW" | version u32 | flags u32 | count u32 |
    count x ( name_len u16 | name utf-8 | rank u8 | dims u32[rank] | f32[prod(dims)] )

Flag bit 0 marks activation parameters (``*.alpha``/``*.beta``) as stored
in log scale.

LDCB layout::

    "LDCB" | version u32 | sample_rate u32 | N u8 | M_q1 u8 | M_q2 u8 |
    M_1 u16 | M_2 u16 | frames u32 | payload

The payload is, for each long-term block, its M_q1 long-term codes followed
by the M_q2 short-term codes of each of its N frames, every code written
MSB-first in log2(M) bits, with the last byte zero-padded.
"""

import configparser
import dataclasses
import io
import os
import struct
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import (
    BadMagicError,
    BitstreamEncodingError,
    BitstreamParseError,
    ConfigParseError,
    ConfigurationError,
    DuplicateNameError,
    FormatError,
    ShapeMismatchError,
    TruncatedError,
)
from .graph import DecoderSpec, EncoderSpec, ModelConfig, ModelWeights
from .lsrvq import CodedStream, FittedQuantizer, LsrvqConfig, RvqStack, extractor_tensor_shapes

__all__ = [
    "WEIGHTS_MAGIC",
    "BITSTREAM_MAGIC",
    "FORMAT_VERSION",
    "FLAG_LOG_SCALE",
    "CodecConfig",
    "weights_to_bytes",
    "weights_from_bytes",
    "save_weights",
    "load_weights",
    "quantizer_tensors",
    "quantizer_from_weights",
    "write_bitstream",
    "read_bitstream",
    "payload_bits",
    "BITSTREAM_HEADER_SIZE",
    "config_to_text",
    "config_from_text",
    "save_config",
    "load_config",
    "reference_config",
]

WEIGHTS_MAGIC = b"LDCW"
BITSTREAM_MAGIC = b"LDCB"
FORMAT_VERSION = 1
FLAG_LOG_SCALE = 1

_WEIGHTS_HEADER = struct.Struct("<4sIII")
_BITSTREAM_HEADER = struct.Struct("<4sIIBBBHHI")
BITSTREAM_HEADER_SIZE = _BITSTREAM_HEADER.size


# -- weights -----------------------------------------------------------------


def weights_to_bytes(weights):
    if not isinstance(weights, ModelWeights):
        weights = ModelWeights(dict(weights))
    flags = FLAG_LOG_SCALE if weights.log_scale_activations else 0
    out = io.BytesIO()
    out.write(_WEIGHTS_HEADER.pack(WEIGHTS_MAGIC, FORMAT_VERSION, flags, len(weights.tensors)))
    for name in sorted(weights.tensors):
        arr = np.asarray(weights.tensors[name])
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise FormatError(f"tensor {name!r} name or rank too large for LDCW")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return out.getvalue()


class _Reader:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncatedError(f"file truncated while reading {what} at byte {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def weights_from_bytes(data, expected_shapes=None):
    """Parse an LDCW buffer.

    Args:
        data: the file contents.
        expected_shapes: optional ``{name: shape}``; every listed tensor that
            is present must have exactly that shape.

    Raises:
        BadMagicError, TruncatedError, DuplicateNameError, ShapeMismatchError,
        FormatError (unsupported version or trailing bytes).
    """
    r = _Reader(data)
    if len(data) < 4 and WEIGHTS_MAGIC.startswith(bytes(data)):
        raise TruncatedError(f"file truncated inside the magic ({len(data)} bytes)")
    if bytes(data[:4]) != WEIGHTS_MAGIC:
        raise BadMagicError(f"not an LDCW weight file (magic {bytes(data[:4])!r})")
    _, version, flags, count = r.unpack(_WEIGHTS_HEADER.format, "header")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported LDCW version {version}")
    tensors = {}
    for i in range(count):
        (name_len,) = r.unpack("<H", f"tensor {i} name length")
        try:
            name = bytes(r.take(name_len, f"tensor {i} name")).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"tensor {i} name is not UTF-8") from exc
        if name in tensors:
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        (rank,) = r.unpack("<B", f"{name} rank")
        dims = r.unpack(f"<{rank}I", f"{name} dims")
        size = int(np.prod(dims, dtype=np.int64))
        payload = r.take(4 * size, f"{name} payload")
        arr = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
        if expected_shapes is not None and name in expected_shapes and tuple(expected_shapes[name]) != dims:
            raise ShapeMismatchError(f"tensor {name!r} has shape {dims}, expected {tuple(expected_shapes[name])}")
        tensors[name] = arr
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes after {count} tensors")
    return ModelWeights(tensors, bool(flags & FLAG_LOG_SCALE))


def save_weights(weights, dest):
    """Write ``weights`` to a path or a binary file object."""
    data = weights_to_bytes(weights)
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "wb") as fh:
            fh.write(data)
    else:
        dest.write(data)


def load_weights(source, expected_shapes=None):
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    elif isinstance(source, (bytes, bytearray, memoryview)):
        data = bytes(source)
    else:
        data = source.read()
    return weights_from_bytes(data, expected_shapes)


def quantizer_tensors(quantizer):
    """Flatten fitted LSRVQ stacks (and conv extractor weights) into named tensors."""
    tensors = {}
    for stream, stack in (("lt", quantizer.lt), ("st", quantizer.st)):
        for k, cb in enumerate(stack.codebooks):
            tensors[f"lsrvq.{stream}.layer{k}"] = np.asarray(cb, np.float32)
    if quantizer.weights:
        tensors.update({k: np.asarray(v, np.float32) for k, v in quantizer.weights.items()})
    return tensors


def quantizer_from_weights(weights, cfg, dim):
    """Rebuild a :class:`FittedQuantizer` from ``lsrvq.*`` tensors."""
    tensors = weights.tensors if isinstance(weights, ModelWeights) else dict(weights)
    stacks = []
    for stream, layers, size in (("lt", cfg.lt_layers, cfg.lt_size), ("st", cfg.st_layers, cfg.st_size)):
        books = []
        for k in range(layers):
            name = f"lsrvq.{stream}.layer{k}"
            if name not in tensors:
                raise ConfigurationError(f"model is missing codebook {name!r}")
            if tensors[name].shape != (size, dim):
                raise ConfigurationError(f"codebook {name!r} has shape {tensors[name].shape}, expected {(size, dim)}")
            books.append(tensors[name])
        stacks.append(RvqStack(tuple(books)))
    ext = None
    if cfg.extractor == "conv":
        ext = {}
        for name, shape in extractor_tensor_shapes(dim, cfg.n_step).items():
            if name not in tensors:
                raise ConfigurationError(f"model is missing extractor tensor {name!r}")
            if tuple(tensors[name].shape) != shape:
                raise ConfigurationError(f"extractor tensor {name!r} has shape {tensors[name].shape}, expected {shape}")
            ext[name] = tensors[name]
    return FittedQuantizer(stacks[0], stacks[1], ext)


# -- bitstream ---------------------------------------------------------------


def payload_bits(frames, cfg):
    """Exact payload size in bits for ``frames`` latent frames."""
    blocks = -(-frames // cfg.n_step)
    return blocks * cfg.lt_layers * cfg.lt_bits + blocks * cfg.n_step * cfg.st_layers * cfg.st_bits


def _to_bits(values, width):
    values = np.asarray(values, dtype=np.int64)
    if width == 0:
        return np.zeros(values.shape + (0,), np.uint8)
    shifts = np.arange(width - 1, -1, -1)
    return ((values[..., None] >> shifts) & 1).astype(np.uint8)


def _from_bits(bits, width):
    if width == 0:
        return np.zeros(bits.shape[:-1], np.int64)
    weights = 1 << np.arange(width - 1, -1, -1, dtype=np.int64)
    return bits.astype(np.int64) @ weights


def write_bitstream(codes, cfg=None, sample_rate=16000):
    """Serialize a :class:`CodedStream` to LDCB bytes.

    Raises:
        BitstreamEncodingError: a code does not fit its codebook, or the
            geometry does not fit the header fields.
    """
    cfg = codes.config if cfg is None else cfg
    if cfg.n_step > 0xFF or cfg.lt_layers > 0xFF or cfg.st_layers > 0xFF:
        raise BitstreamEncodingError("N, M_q1 and M_q2 must each fit in one byte")
    if cfg.lt_size > 0xFFFF or cfg.st_size > 0xFFFF:
        raise BitstreamEncodingError("codebook sizes must fit in 16 bits")
    if not 0 <= codes.frames <= 0xFFFFFFFF:
        raise BitstreamEncodingError("frame count does not fit in 32 bits")
    lt, st = codes.lt_codes, codes.st_codes
    blocks = -(-codes.frames // cfg.n_step)
    if lt.shape != (blocks, cfg.lt_layers) or st.shape != (blocks * cfg.n_step, cfg.st_layers):
        raise BitstreamEncodingError(
            f"code arrays {lt.shape}/{st.shape} do not match {blocks} blocks of N={cfg.n_step}, "
            f"M_q1={cfg.lt_layers}, M_q2={cfg.st_layers}"
        )
    for name, arr, size in (("long-term", lt, cfg.lt_size), ("short-term", st, cfg.st_size)):
        if arr.size and (arr.min() < 0 or arr.max() >= size):
            raise BitstreamEncodingError(f"{name} code {int(arr.max())} out of range for codebook size {size}")

    header = _BITSTREAM_HEADER.pack(
        BITSTREAM_MAGIC,
        FORMAT_VERSION,
        sample_rate,
        cfg.n_step,
        cfg.lt_layers,
        cfg.st_layers,
        cfg.lt_size,
        cfg.st_size,
        codes.frames,
    )
    if blocks == 0:
        return header
    rows = np.concatenate(
        [
            _to_bits(lt, cfg.lt_bits).reshape(blocks, cfg.lt_layers * cfg.lt_bits),
            _to_bits(st, cfg.st_bits).reshape(blocks, cfg.n_step * cfg.st_layers * cfg.st_bits),
        ],
        axis=1,
    )
    return header + np.packbits(rows.reshape(-1)).tobytes()


def read_bitstream(data, hop_length=320, config=None):
    """Parse LDCB bytes into ``(CodedStream, LsrvqConfig)``.

    The header does not carry the latent frame rate, so the returned config
    uses ``sample_rate / hop_length``. If ``config`` is given, the header
    fields must agree with it and it is returned as is (frame rate,
    extractor and beam settings included).

    Raises:
        BitstreamParseError: bad magic, version, header or payload length.
    """
    data = bytes(data)
    if len(data) < _BITSTREAM_HEADER.size:
        raise BitstreamParseError(f"bitstream shorter than its {_BITSTREAM_HEADER.size}-byte header")
    magic, version, sample_rate, n, mq1, mq2, m1, m2, frames = _BITSTREAM_HEADER.unpack_from(data)
    if magic != BITSTREAM_MAGIC:
        raise BitstreamParseError(f"not an LDCB bitstream (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise BitstreamParseError(f"unsupported LDCB version {version}")
    if sample_rate == 0:
        raise BitstreamParseError("sample_rate is zero")
    try:
        cfg = LsrvqConfig(
            n_step=n,
            frame_rate=sample_rate / hop_length,
            lt_layers=mq1,
            lt_size=m1,
            st_layers=mq2,
            st_size=m2,
        )
    except ConfigurationError as exc:
        raise BitstreamParseError(f"invalid header: {exc}") from exc
    if config is not None:
        mismatched = [
            f
            for f in ("n_step", "lt_layers", "lt_size", "st_layers", "st_size")
            if getattr(cfg, f) != getattr(config, f)
        ]
        if mismatched:
            raise BitstreamParseError(f"bitstream header disagrees with config on {mismatched}")
        cfg = config

    blocks = -(-frames // n)
    total = payload_bits(frames, cfg)
    payload = np.frombuffer(data, dtype=np.uint8, offset=_BITSTREAM_HEADER.size)
    if payload.size != -(-total // 8):
        raise BitstreamParseError(f"payload is {payload.size} bytes, expected {-(-total // 8)}")
    bits = np.unpackbits(payload)
    if bits[total:].any():
        raise BitstreamParseError("non-zero padding bits after the last code")
    rows = bits[:total].reshape(blocks, total // blocks if blocks else 0)
    split = mq1 * cfg.lt_bits
    lt = _from_bits(rows[:, :split].reshape(blocks, mq1, cfg.lt_bits), cfg.lt_bits)
    st = _from_bits(rows[:, split:].reshape(blocks * n, mq2, cfg.st_bits), cfg.st_bits)
    return CodedStream(lt, st, frames, cfg), cfg


# -- config ------------------------------------------------------------------


@dataclass(frozen=True)
class CodecConfig:
    model: ModelConfig
    lsrvq: LsrvqConfig


_SECTIONS = {"encoder": EncoderSpec, "decoder": DecoderSpec, "lsrvq": LsrvqConfig}
_MODEL_FIELDS = {"sample_rate": int, "latent_dim": int}


def _field_types(cls):
    types = {}
    for f in dataclasses.fields(cls):
        if f.name == "latent_dim":
            continue
        if f.default is dataclasses.MISSING:
            required = True
        else:
            required = False
        kind = type(f.default) if not required else int
        types[f.name] = (kind, required)
    return types


def _parse_value(kind, raw, where):
    try:
        if kind is tuple:
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if kind is bool:
            return raw.strip().lower() in ("1", "true", "yes")
        if kind is float:
            return float(raw)
        if kind is int:
            return int(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigParseError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from exc


def config_from_text(text):
    """Parse config text (``[section]`` headers, ``key: value`` lines).

    Raises:
        ConfigParseError: unknown section or field, missing required field,
            bad value, or a value violating a type invariant; the message
            names the offending ``section.field``.
    """
    parser = configparser.ConfigParser(interpolation=None, delimiters=(":", "="))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigParseError(f"malformed config: {exc}") from exc
    for section in parser.sections():
        if section != "model" and section not in _SECTIONS:
            raise ConfigParseError(f"unknown section [{section}]")
    if not parser.has_section("model"):
        raise ConfigParseError("missing section [model]")

    model = {}
    for key, raw in parser.items("model"):
        if key not in _MODEL_FIELDS:
            raise ConfigParseError(f"unknown field model.{key}")
        model[key] = _parse_value(_MODEL_FIELDS[key], raw, f"model.{key}")
    if "latent_dim" not in model:
        raise ConfigParseError("missing required field model.latent_dim")
    sample_rate = model.get("sample_rate", 16000)

    parsed = {}
    for section, cls in _SECTIONS.items():
        types = _field_types(cls)
        items = dict(parser.items(section)) if parser.has_section(section) else {}
        kwargs = {}
        for key, raw in items.items():
            if key not in types:
                raise ConfigParseError(f"unknown field {section}.{key}")
            kwargs[key] = _parse_value(types[key][0], raw, f"{section}.{key}")
        for key, (_, required) in types.items():
            if required and key not in kwargs:
                raise ConfigParseError(f"missing required field {section}.{key}")
        if section != "lsrvq":
            kwargs["latent_dim"] = model["latent_dim"]
        parsed[section] = (cls, kwargs)

    try:
        enc = EncoderSpec(**parsed["encoder"][1])
        dec = DecoderSpec(**parsed["decoder"][1])
        model_cfg = ModelConfig(enc, dec, sample_rate)
    except ConfigurationError as exc:
        raise ConfigParseError(f"invalid model: {exc}") from exc
    lkw = parsed["lsrvq"][1]
    if "frame_rate" in lkw and abs(lkw["frame_rate"] - model_cfg.frame_rate) > 1e-9:
        raise ConfigParseError(
            f"lsrvq.frame_rate={lkw['frame_rate']} disagrees with model frame rate {model_cfg.frame_rate}"
        )
    lkw["frame_rate"] = model_cfg.frame_rate
    try:
        lsrvq = LsrvqConfig(**lkw)
    except ConfigurationError as exc:
        raise ConfigParseError(f"invalid lsrvq section: {exc}") from exc
    return CodecConfig(model_cfg, lsrvq)


def _format_value(value):
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def config_to_text(cfg):
    lines = ["[model]", f"sample_rate: {cfg.model.sample_rate}", f"latent_dim: {cfg.model.latent_dim}"]
    for section, obj in (("encoder", cfg.model.encoder), ("decoder", cfg.model.decoder), ("lsrvq", cfg.lsrvq)):
        lines += ["", f"[{section}]"]
        for f in dataclasses.fields(obj):
            if f.name == "latent_dim":
                continue
            lines.append(f"{f.name}: {_format_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return config_from_text(fh.read())


def reference_config():
    """The shipped configuration, calibrated to ~0.26 decoder GMACs per second."""
    text = resources.files("ldcodec").joinpath("data/reference.cfg").read_text(encoding="utf-8")
    return config_from_text(text)
