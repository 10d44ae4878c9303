# # Long-term / short-term residual vector quantization
#
# Latent frames are split in two streams. Every N frames are averaged into a
# long-term vector and quantized with a small RVQ stack. What is left in each
# frame goes through a deeper short-term stack. The bitrate follows directly
# from the stack sizes.

# +
import numpy as np

from ldcodec.lsrvq import LsrvqConfig, bitrate, fit_codebooks, lsrvq_decode, lsrvq_encode, rvq_encode

print("reference bitrate:", bitrate(LsrvqConfig()), "bps")
for n in (1, 2, 4):
    print(f"N={n}:", bitrate(LsrvqConfig(n_step=n)), "bps")
# -

# Slowly varying features with some per-frame jitter, then small codebooks fitted by k-means.

rng = np.random.default_rng(0)
dim, frames = 8, 400
slow = np.repeat(rng.standard_normal((dim, frames // 8)), 8, axis=1)
features = slow + 0.3 * rng.standard_normal((dim, frames))
cfg = LsrvqConfig(n_step=2, lt_layers=2, lt_size=16, st_layers=4, st_size=16)
fitted = fit_codebooks([features], cfg, seed=0)

# Each extra short-term layer removes more of the error.

for m in range(cfg.st_layers + 1):
    sub = LsrvqConfig(n_step=2, lt_layers=2, lt_size=16, st_layers=m, st_size=16)
    stacks = (fitted.lt, fitted.st.truncated(m))
    recon = lsrvq_decode(lsrvq_encode(features, sub, stacks), sub, stacks)
    mse = float(np.mean((recon - features) ** 2))
    print(f"{m} short-term layers, {bitrate(sub):6.0f} bps: mse {mse:.4f}")

# A beam search over code paths can only lower the error of one vector.

v = features[:, 0]
for width in (1, 4, 16):
    _, err = rvq_encode(fitted.st, v - features[:, :2].mean(axis=1), beam_width=width)
    print(f"beam {width:2d}: error {err:.4f}")
