"""Command-line entry point: ``ldcodec <command> ...``."""

import argparse
import sys
from pathlib import Path

from .audio import read_wav, write_wav
from .codec import Codec, fit_model, measured_bitrate
from .errors import LDCodecError
from .graph import complexity_report
from .lsrvq import bitrate
from .metrics import spectral_report
from .model_io import load_config, load_weights, read_bitstream, save_weights


def _codec(args):
    config = load_config(args.config)
    return Codec(config, load_weights(args.model))


def cmd_encode(args):
    codec = _codec(args)
    audio = read_wav(args.input, codec.sample_rate)
    data = codec.encode(audio.samples, args.beam_width)
    Path(args.output).write_bytes(data)
    print(f"wrote {len(data)} bytes to {args.output}")


def cmd_decode(args):
    codec = _codec(args)
    samples = codec.decode(Path(args.input).read_bytes())
    write_wav(args.output, samples, codec.sample_rate)
    print(f"wrote {samples.size} samples to {args.output}")


def cmd_analyze(args):
    ref = read_wav(args.reference)
    deg = read_wav(args.degraded)
    text = spectral_report(ref.samples, deg.samples).to_text()
    print(text)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")


def cmd_complexity(args):
    config = load_config(args.config)
    report = complexity_report(config.model.decoder, args.seconds, config.model.sample_rate)
    print(report.to_text(per_layer=args.per_layer))


def cmd_fit_quantizer(args):
    config = load_config(args.config)
    paths = sorted(Path(args.corpus).glob("*.wav"))
    if not paths:
        raise LDCodecError(f"no .wav files in {args.corpus}")
    waves = [read_wav(p, config.model.sample_rate).samples for p in paths]
    base = load_weights(args.model) if args.model else None
    codec = fit_model(config, waves, seed=args.seed, weights=base)
    save_weights(codec.weights, args.output)
    print(f"fitted {config.lsrvq.lt_layers}+{config.lsrvq.st_layers} codebooks on {len(paths)} files; wrote {args.output}")


def cmd_roundtrip(args):
    codec = _codec(args)
    audio = read_wav(args.input, codec.sample_rate)
    data = codec.encode(audio.samples, args.beam_width)
    samples = codec.decode(data)[: audio.samples.size]
    write_wav(args.output, samples, codec.sample_rate)
    codes, cfg = read_bitstream(data, codec.hop_length, codec.config.lsrvq)
    print(f"input_samples: {audio.samples.size}")
    print(f"output_samples: {samples.size}")
    print(f"bitstream_bytes: {len(data)}")
    print(f"measured_bitrate: {measured_bitrate(codes.frames, cfg):.3f}")
    print(f"nominal_bitrate: {bitrate(cfg):.3f}")


def build_parser():
    parser = argparse.ArgumentParser(prog="ldcodec", description="Low-complexity neural audio codec runtime")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="WAV -> LDCB bitstream")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam-width", type=int, default=None)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="LDCB bitstream -> WAV")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("analyze", help="spectral distances and perceptual mel losses")
    p.add_argument("--reference", required=True)
    p.add_argument("--degraded", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("complexity", help="decoder MAC report")
    p.add_argument("--config", required=True)
    p.add_argument("--per-layer", action="store_true")
    p.add_argument("--seconds", type=float, default=1.0)
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("fit-quantizer", help="fit LSRVQ codebooks on a WAV corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--model", default=None, help="reuse encoder/decoder weights from this file")
    p.set_defaults(func=cmd_fit_quantizer)

    p = sub.add_parser("roundtrip", help="encode + decode, report measured bitrate")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam-width", type=int, default=None)
    p.set_defaults(func=cmd_roundtrip)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (LDCodecError, OSError) as exc:
        print(f"ldcodec {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
