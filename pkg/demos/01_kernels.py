# # Convolution kernels and SnakeBeta
#
# Every layer of the decoder is one of three things: a (grouped, dilated)
# 1-D convolution, a transposed convolution that upsamples in time, or a
# per-channel SnakeBeta activation. Feature maps are plain `(channels, frames)`
# arrays.

# +
import numpy as np

from ldcodec.kernels import ActivationParams, ConvSpec, conv1d, conv_transpose1d, mac_count, snake_beta

rng = np.random.default_rng(0)
x = rng.standard_normal((4, 10)).astype(np.float32)
# -

# A dilated, grouped convolution keeps the frame count when padding equals the dilation.

spec = ConvSpec(4, 8, kernel_size=3, padding=3, dilation=3, groups=2)
w = rng.standard_normal(spec.weight_shape).astype(np.float32)
y = conv1d(x, spec, w)
print("conv1d", x.shape, "->", y.shape, "weights", spec.weight_shape)
print("MACs", mac_count(spec, x.shape[1]))

# The transposed convolution with kernel 2r and stride r multiplies the frame count by r.

r = 4
up = ConvSpec(8, 4, kernel_size=2 * r, stride=r, padding=r // 2, groups=2, transposed=True)
z = conv_transpose1d(y, up, rng.standard_normal(up.weight_shape).astype(np.float32))
print("conv_transpose1d", y.shape, "->", z.shape)

# SnakeBeta adds a periodic bump `sin^2(alpha x) / beta` on top of the identity.
# With alpha = beta it is the plain Snake activation.

grid = np.linspace(-3, 3, 7)[None, :]
for alpha, beta in ((1.0, 1.0), (3.0, 1.0), (1.0, 4.0)):
    out = snake_beta(grid, ActivationParams(np.array([alpha]), np.array([beta])))
    print(f"alpha={alpha} beta={beta}:", np.round(out[0], 3))
