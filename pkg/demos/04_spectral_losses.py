# # Spectral distances and the perceptual mel losses
#
# Two weighted L1 losses sit on top of multi-resolution log-mel grids. One
# doubles the weight of frames where the reference has a sudden energy jump.
# The other doubles the weight of cells where the decoded signal is louder
# than the reference.

# +
import numpy as np

from ldcodec.metrics import SpectralScale, detect_transients, perceptual_mel_loss, spectral_distances

sr = 16000
t = np.arange(sr) / sr
speechy = 0.3 * np.sin(2 * np.pi * 180 * t) * (1 + 0.5 * np.sin(2 * np.pi * 3 * t))
speechy[8000:8100] += 0.6
# -

flags = detect_transients(speechy, SpectralScale(512, 128, 40))
print("transient frames:", np.flatnonzero(flags))

# The same amount of error costs more when it adds energy than when it removes it.

for gain in (0.8, 1.25):
    losses = perceptual_mel_loss(speechy, gain * speechy)
    dist = spectral_distances(speechy, gain * speechy)
    print(
        f"gain {gain}: transient {losses['transient']:.4f} energy {losses['energy']:.4f} "
        f"mel {dist['mel_distance']:.4f} stft {dist['stft_distance']:.4f}"
    )
