"""Images, patch grids and the degradation toolbox.

Generates one synthetic fake, cuts it into patches, and shows how each
degradation changes it.  Run: python demos/01_images_and_degradations.py
"""

import numpy as np

from lgdetect.degrade import DegradationOp, DegradationSpec, apply_degradation, jpeg_quantize, ladder_default
from lgdetect.imaging import extract_patches, stitch_patches
from lgdetect.synthdata import SynthConfig, gen_fake, gen_real

cfg = SynthConfig(seed=0)
fake, mask = gen_fake(cfg, 1)
real = gen_real(cfg, 1)  # the same index gives the untouched base image
print(f"image {fake.shape}, forged patches {mask.sum()} of {mask.size}")
print("forged patch map (1 = forged):")
print("\n".join("  " + "".join("1" if v else "." for v in row) for row in mask))

grid = extract_patches(fake, cfg.patch_size)
assert np.array_equal(stitch_patches(grid), fake)
v_fake = grid.patches.var(axis=(1, 2)).mean(-1).reshape(mask.shape)
v_real = extract_patches(real, cfg.patch_size).patches.var(axis=(1, 2)).mean(-1).reshape(mask.shape)
print(f"texture variance ratio inside the forged block: {np.min((v_fake / v_real)[mask]):.2f}x (min)")
print(f"                        outside the forged block: {np.max((v_fake / v_real)[~mask]):.2f}x (max)")

# A degradation chain is data: ops plus a seed, serialisable to JSON.
spec = DegradationSpec(
    (
        DegradationOp("gaussian_blur", {"sigma": 1.0}),
        DegradationOp("gaussian_noise", {"std": 0.02}),
        DegradationOp("jpeg_quantize", {"quality": 60}),
    ),
    seed=3,
)
out = apply_degradation(fake, spec)
print(f"\nchain {spec.to_dict()}")
print(f"mean abs change {np.mean(np.abs(out - fake)):.4f}")

print("\nJPEG quality ladder, mean squared error on the fake:")
for q in ladder_default("jpeg_qf").levels:
    print(f"  QF {int(q):3d}: {np.mean((jpeg_quantize(fake, int(q)) - fake) ** 2):.2e}")
