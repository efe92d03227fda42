"""
Turning one heartbeat into three images
=======================================

A beat is a vector of samples in [0, 1]. Each encoder maps it to a square
image whose side equals the beat length, which is then resized for the
network.
"""
import numpy as np

from hbfuse import encode as enc
from hbfuse.synthetic import synth_beat

rng = np.random.default_rng(0)
beat = synth_beat(2, rng)  # a ventricular-looking beat, 187 samples
print("beat length", beat.size, "range", beat.min(), beat.max())

# Gramian angular field. The matrix form and the angle form agree, and the
# diagonal gives the samples back.
g = enc.gaf(beat)
print("GAF forms agree to", np.abs(enc.gaf_field(beat) - enc.gaf_field_angular(beat)).max())
print("GAF diagonal round trip error", np.abs(enc.gaf_diagonal_invert(g) - beat).max())

# Recurrence plot: grayscale 1 - |s_i - s_j| by default, or thresholded at the
# 10th percentile of the beat's own pairwise distances.
r = enc.rp(beat)
rb = enc.rp(beat, enc.RpConfig(mode="binary"))
print("RP symmetric", np.array_equal(r, r.T), "binary fill fraction", rb.mean().round(3))

# Markov transition field: 10 quantile bins, transition matrix W, then
# M[i, j] = W[bin(s_i), bin(s_j)].
m, w = enc.mtf(beat, return_matrix=True)
print("MTF row sums", w.sum(axis=1).round(12))

# A tiny hand-checkable case: two bins, each sample stays or moves once.
print(enc.mtf([0.0, 0.0, 1.0, 1.0], enc.MtfConfig(2), return_matrix=True)[1])

# Everything is resized to the network input with corner-aligned bilinear
# interpolation.
gaf64, rp64, mtf64 = enc.encode_all(beat, out_size=64)
print("resized shapes", gaf64.shape, rp64.shape, mtf64.shape)

# Coarse text rendering of the 16x16 GAF, darkest to brightest
small = enc.resize_bilinear(g, 16)
ramp = " .:-=+*#%@"
for row in small:
    print("".join(ramp[min(int(v * len(ramp)), len(ramp) - 1)] for v in row))
