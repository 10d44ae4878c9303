"""End-to-end codec: waveform -> LDCB bytes -> waveform."""

import numpy as np

from .errors import ConfigurationError
from .graph import ModelWeights, build_decoder, build_encoder, init_weights, pad_to_multiple
from .lsrvq import fit_codebooks, lsrvq_decode, lsrvq_encode
from .model_io import payload_bits, quantizer_from_weights, quantizer_tensors, read_bitstream, write_bitstream


class Codec:
    """Encoder, LSRVQ quantizer and decoder bound to one :class:`CodecConfig`."""

    def __init__(self, config, weights):
        if not isinstance(weights, ModelWeights):
            weights = ModelWeights(dict(weights))
        self.config = config
        self.weights = weights
        self.encoder = build_encoder(config.model.encoder, weights)
        self.decoder = build_decoder(config.model.decoder, weights)
        self.quantizer = quantizer_from_weights(weights, config.lsrvq, config.model.latent_dim)

    @property
    def hop_length(self):
        return self.config.model.hop_length

    @property
    def sample_rate(self):
        return self.config.model.sample_rate

    def features(self, waveform):
        """Encoder features of the zero-padded waveform."""
        return self.encoder(pad_to_multiple(np.asarray(waveform, np.float32), self.hop_length))

    def encode(self, waveform, beam_width=None):
        codes = lsrvq_encode(
            self.features(waveform), self.config.lsrvq, self.quantizer, self.quantizer.weights, beam_width
        )
        return write_bitstream(codes, self.config.lsrvq, self.sample_rate)

    def decode(self, data):
        codes, cfg = read_bitstream(data, self.hop_length, self.config.lsrvq)
        latent = lsrvq_decode(codes, cfg, self.quantizer, self.quantizer.weights)
        if latent.shape[1] == 0:
            return np.zeros(0, np.float32)
        return self.decoder(latent)

    def roundtrip(self, waveform, beam_width=None):
        """Encode and decode; returns ``(samples trimmed to input length, bitstream, bits/s)``."""
        waveform = np.asarray(waveform, np.float32).reshape(-1)
        data = self.encode(waveform, beam_width)
        out = self.decode(data)[: waveform.size]
        codes, _ = read_bitstream(data, self.hop_length, self.config.lsrvq)
        return out, data, measured_bitrate(codes.frames, self.config.lsrvq)


def measured_bitrate(frames, cfg):
    """Payload bits per second for ``frames`` latent frames."""
    if frames == 0:
        raise ConfigurationError("no frames coded")
    return payload_bits(frames, cfg) / (frames / cfg.frame_rate)


def fit_model(config, waveforms, seed=0, weights=None):
    """Random (or given) encoder/decoder weights plus codebooks fitted on ``waveforms``."""
    if weights is None:
        weights = init_weights(config.model, seed)
    else:
        weights = ModelWeights({k: v for k, v in weights.tensors.items() if not k.startswith("lsrvq.")},
                               weights.log_scale_activations)
    encoder = build_encoder(config.model.encoder, weights)
    hop = config.model.hop_length
    feats = [encoder(pad_to_multiple(np.asarray(w, np.float32), hop)) for w in waveforms]
    quantizer = fit_codebooks(feats, config.lsrvq, seed=seed)
    merged = ModelWeights(dict(weights.tensors), weights.log_scale_activations)
    merged.tensors.update(quantizer_tensors(quantizer))
    return Codec(config, merged)
