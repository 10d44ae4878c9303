# # Bitstream layout
#
# The coded stream is a fixed 23-byte header followed by tightly packed code
# indices, most significant bit first. One second at the reference setting is
# 750 payload bytes.

# +
import numpy as np

from ldcodec.lsrvq import CodedStream, LsrvqConfig
from ldcodec.model_io import BITSTREAM_HEADER_SIZE, read_bitstream, write_bitstream

cfg = LsrvqConfig()
rng = np.random.default_rng(0)
codes = CodedStream(rng.integers(0, 1024, (25, 2)), rng.integers(0, 1024, (50, 11)), 50, cfg)
data = write_bitstream(codes)
print("header", BITSTREAM_HEADER_SIZE, "bytes, payload", len(data) - BITSTREAM_HEADER_SIZE, "bytes")
print("header bytes:", data[:BITSTREAM_HEADER_SIZE].hex(" "))
back, _ = read_bitstream(data)
print("round trip exact:", back == codes)
# -

# A single 4-bit code 3 packs to the bit string 0011, padded to one byte.

tiny = LsrvqConfig(n_step=1, lt_layers=0, lt_size=2, st_layers=1, st_size=16)
one = write_bitstream(CodedStream(np.zeros((1, 0)), np.array([[3]]), 1, tiny))
print("payload:", one[BITSTREAM_HEADER_SIZE:].hex())
