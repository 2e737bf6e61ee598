"""Kernel-mean intensity features and their temporal derivatives."""

import numpy as np

from usgait.features import FeatureConfig, KernelGrid, trial_features, standardize
from usgait.frames import FrameSequence

# a bright band drifting down through a 48 x 32 image at 0.5 mm/px
t = np.arange(0, 500, 50)
images = np.full((t.size, 48, 32), 40, np.uint8)
for i in range(t.size):
    images[i, 10 + 2 * i: 16 + 2 * i] = 200
seq = FrameSequence(t, images, 0.5)

grid = KernelGrid.for_frames(48, 32, 0.5, 3.0)
print(f"kernel {grid.kernel_px}px, grid {grid.rows} x {grid.cols} = {grid.n} kernels")

fm, _ = trial_features(seq, FeatureConfig(3.0, include_temporal=True))
print("feature matrix", fm.values.shape, fm.layout.value)
col = grid.flat_index(3, 0)
print("kernel (3,0) intensity over time:", fm.values[:, col].round(1))
print("kernel (3,0) derivative (/s):    ", fm.values[:, grid.n + col].round(1))

st, z = standardize(fm.values[:6], fm.values[6:])
print("held-out rows z-scored with training statistics:", z.shape)
