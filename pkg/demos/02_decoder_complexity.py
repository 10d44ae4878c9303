# # Decoder complexity
#
# The MAC count of a convolution decoder depends only on its shapes, so it
# can be reported without running anything. The shipped configuration lands
# close to 0.26 GMACs per second of 16 kHz audio.

# +
import time

import numpy as np

from ldcodec.graph import build_decoder, complexity_report, init_weights
from ldcodec.model_io import reference_config

cfg = reference_config().model
report = complexity_report(cfg.decoder, seconds=1.0, sample_rate=cfg.sample_rate)
print(report.to_text(per_layer=True))
# -

# Each block halves the channel count while the frame rate grows by the
# upsampling factor, so the cost spreads fairly evenly over the blocks.

by_block = {}
for layer in report.layers:
    key = layer.path.split(".")[1]
    by_block[key] = by_block.get(key, 0) + layer.macs
for key, macs in by_block.items():
    print(f"{key:8s} {macs / report.total_macs:6.1%}")

# Running the decoder on random weights gives an idea of the speed.

decoder = build_decoder(cfg.decoder, init_weights(cfg, seed=0))
latent = np.random.default_rng(1).standard_normal((cfg.latent_dim, int(cfg.frame_rate))).astype(np.float32)
start = time.perf_counter()
wave = decoder(latent)
elapsed = time.perf_counter() - start
print(f"{wave.size} samples in {elapsed:.3f} s ({1 / elapsed:.1f}x real time)")
