"""How many bytes cross the link at each compression setting.

Uses full-size feature extents (64 channels at 272x480) and the sweep of
channel/spatial rates; only shapes are computed, no features are run.

    python3 demos/02_link_budget.py
"""
from coopdet.compression import CompressionConfig, FeatureCompressor
from coopdet.config import FULL_COMPRESSION_SWEEP, RunConfig

cfg = RunConfig.full()
c, h, w = cfg.channels, cfg.image_hw[0] // 4, cfg.image_hw[1] // 4
print(f"uncompressed scale-0 feature: {c}x{h}x{w} float32 = {c * h * w * 4 / 2**20:.1f} MiB")
print(f"{'CCR':>4} {'SCR':>4} {'rate':>6} {'payload':>14} {'bytes':>12} {'conv blocks':>12}")
for ccr, scr in FULL_COMPRESSION_SWEEP:
    cc = CompressionConfig(ccr, scr)
    shape = cc.payload_shape(c, h, w)
    nbytes = shape[0] * shape[1] * shape[2] * cc.wire_dtype_bytes
    print(f"{ccr:>4} {scr:>4} {cc.rate:>6} {str(shape):>14} {nbytes:>12} {cc.alpha:>12}")

# %% the module itself at a small size: payload in, four scales out
import numpy as np
from coopdet.ndtensor import Tensor

fc = FeatureCompressor(np.random.default_rng(0), 16, CompressionConfig(4, 16))
pkt = fc.compress(Tensor(np.random.default_rng(1).normal(size=(16, 32, 32))))
print("payload", pkt.shape, f"{pkt.byte_count} B on the wire (+{len(pkt.to_bytes()) - pkt.byte_count} B header)")
print("restored scales", [s.shape for s in fc.decompress(pkt)])
