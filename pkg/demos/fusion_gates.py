"""
Gated feature fusion
====================

Three feature vectors of equal length D are combined into one of length D.
Each gets an element-wise gate, the sigmoid of its high-boost filtered self.
"""
import numpy as np

from hbfuse import fusion

# The 1-d high-boost kernel with c = 1 is [-1, 3, -1] and sums to c.
print(fusion.high_boost_filter([0.0, 1.0, 0.0]))

rng = np.random.default_rng(1)
f_gaf, f_rp, f_mtf = rng.normal(size=(3, 8))

for name, f in (("gaf", f_gaf), ("rp", f_rp), ("mtf", f_mtf)):
    print(name, "gates", fusion.gates(f).round(3))

fused = fusion.gated_fuse(f_gaf, f_rp, f_mtf)
print("gated  ", fused.round(3))

# With all gates forced to 1 the fusion is the plain sum used by the
# average-fusion baseline.
same = fusion.gated_fuse(f_gaf, f_rp, f_mtf, override_gates=1)
print("override equals average:", np.array_equal(same, fusion.average_fuse(f_gaf, f_rp, f_mtf)))

# The 2-d kernel reshapes 512 features to a 16 x 32 grid.
print("grid for 512:", fusion.grid_shape(512))
big = rng.normal(size=(3, 512))
print("2d-mode output dim", fusion.gated_fuse(*big, kernel=fusion.HighBoostKernel(mode="2d")).shape)
