"""Inference and analysis runtime for a low-complexity neural audio codec.

Submodules:

* :mod:`ldcodec.kernels` - 1-D convolutions, Snake/SnakeBeta, pooling, MAC counts
* :mod:`ldcodec.graph` - encoder/decoder graphs and complexity reports
* :mod:`ldcodec.lsrvq` - long/short-term residual VQ, beam search, codebook fitting
* :mod:`ldcodec.metrics` - log-mel machinery, transient detection, spectral losses
* :mod:`ldcodec.model_io` - LDCW weights, LDCB bitstreams, config text
* :mod:`ldcodec.codec` / :mod:`ldcodec.cli` - end-to-end pipeline and command line
"""

from .codec import Codec, fit_model, measured_bitrate
from .graph import (
    DecoderSpec,
    EncoderSpec,
    ModelConfig,
    ModelWeights,
    build_decoder,
    build_encoder,
    complexity_report,
    init_weights,
)
from .lsrvq import LsrvqConfig, RvqStack, bitrate, fit_codebooks, lsrvq_decode, lsrvq_encode
from .model_io import CodecConfig, load_config, load_weights, reference_config, save_config, save_weights

__version__ = "0.1.0"
