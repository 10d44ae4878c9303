"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the code under test except plain spec dataclasses.
"""

import itertools
import math


class MultiplyCounter:
    def __init__(self):
        self.count = 0

    def mul(self, a, b):
        self.count += 1
        return a * b


def naive_conv1d(x, weight, bias, stride=1, padding=0, dilation=1, groups=1, counter=None):
    """Nested-loop cross-correlation over lists; padded taps are multiplied too."""
    counter = counter or MultiplyCounter()
    c_in, frames = len(x), len(x[0])
    c_out, cin_g, k = len(weight), len(weight[0]), len(weight[0][0])
    cout_g = c_out // groups
    padded = [[0.0] * padding + list(row) + [0.0] * padding for row in x]
    n_out = (frames + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    out = []
    for o in range(c_out):
        g = o // cout_g
        row = []
        for t in range(n_out):
            acc = bias[o] if bias is not None else 0.0
            for i in range(cin_g):
                for j in range(k):
                    acc += counter.mul(weight[o][i][j], padded[g * cin_g + i][t * stride + j * dilation])
            row.append(acc)
        out.append(row)
    assert c_in == cin_g * groups
    return out


def naive_conv_transpose1d(x, weight, bias, stride=1, padding=0, dilation=1, groups=1, counter=None):
    """Scatter-add transposed convolution; every product counts, even cropped ones."""
    counter = counter or MultiplyCounter()
    c_in, frames = len(x), len(x[0])
    cout_g, k = len(weight[0]), len(weight[0][0])
    cin_g = c_in // groups
    c_out = cout_g * groups
    full_len = (frames - 1) * stride + dilation * (k - 1) + 1
    full = [[0.0] * full_len for _ in range(c_out)]
    for i in range(c_in):
        g = i // cin_g
        for o in range(cout_g):
            for t in range(frames):
                for j in range(k):
                    full[g * cout_g + o][t * stride + j * dilation] += counter.mul(x[i][t], weight[i][o][j])
    n_out = full_len - 2 * padding
    return [
        [full[o][padding + t] + (bias[o] if bias is not None else 0.0) for t in range(n_out)]
        for o in range(c_out)
    ]


def naive_snake_beta(x, alpha, beta):
    return [[v + math.sin(a * v) ** 2 / b for v in row] for row, a, b in zip(x, alpha, beta)]


def _tolist(a):
    return a.tolist() if hasattr(a, "tolist") else a


def naive_decoder_forward(spec, tensors, latent):
    """Decoder forward with python loops; returns (waveform list, multiply count).

    Mirrors the documented topology: input conv, per block SnakeBeta ->
    transposed conv (kernel 2r, stride r, padding r//2, trailing trim to r*F)
    -> residual units, then SnakeBeta -> output conv -> tanh.
    """
    counter = MultiplyCounter()
    t = {k: _tolist(v) for k, v in tensors.items()}
    x = _tolist(latent)

    def conv(path, x, **kw):
        return naive_conv1d(x, t[f"{path}.weight"], t[f"{path}.bias"], counter=counter, **kw)

    x = conv("decoder.input", x, padding=spec.input_kernel // 2)
    frames = len(latent[0])
    for k, r in enumerate(spec.upsample_factors):
        x = naive_snake_beta(x, t[f"decoder.block{k}.act.alpha"], t[f"decoder.block{k}.act.beta"])
        x = naive_conv_transpose1d(
            x,
            t[f"decoder.block{k}.upsample.weight"],
            t[f"decoder.block{k}.upsample.bias"],
            stride=r,
            padding=r // 2,
            groups=spec.groups,
            counter=counter,
        )
        frames *= r
        x = [row[:frames] for row in x]
        for j, d in enumerate(spec.dilations):
            p = f"decoder.block{k}.res{j}"
            h = conv(f"{p}.expand", x, padding=d, dilation=d, groups=spec.groups)
            h = naive_snake_beta(h, t[f"{p}.act.alpha"], t[f"{p}.act.beta"])
            h = conv(f"{p}.shrink", h, groups=spec.groups)
            x = [[a + b for a, b in zip(ra, rb)] for ra, rb in zip(x, h)]
    x = naive_snake_beta(x, t["decoder.output_act.alpha"], t["decoder.output_act.beta"])
    x = conv("decoder.output", x, padding=spec.output_kernel // 2)
    return [math.tanh(v) for v in x[0]], counter.count


def brute_force_rvq(codebooks, v):
    """Exhaustive minimum of ||v - sum of one codeword per layer||^2.

    Returns (best_error, best_codes) with ties broken lexicographically.
    """
    best = (math.inf, None)
    for codes in itertools.product(*[range(len(cb)) for cb in codebooks]):
        recon = [sum(cb[c][i] for cb, c in zip(codebooks, codes)) for i in range(len(v))]
        err = sum((a - b) ** 2 for a, b in zip(v, recon))
        if err < best[0]:
            best = (err, codes)
    return best


def eq2_bitrate(frame_rate, n_step, lt_layers, lt_size, st_layers, st_size):
    """Bitrate with log2 taken as the bit length of a power of two."""
    lt_bits = lt_size.bit_length() - 1
    st_bits = st_size.bit_length() - 1
    return frame_rate / n_step * lt_layers * lt_bits + frame_rate * st_layers * st_bits


def hand_pack(values_and_widths):
    """MSB-first bit packing via a string of '0'/'1' characters."""
    bits = "".join(format(v, f"0{w}b") if w else "" for v, w in values_and_widths)
    bits += "0" * (-len(bits) % 8)
    return bytes(int(bits[i : i + 8], 2) for i in range(0, len(bits), 8))
