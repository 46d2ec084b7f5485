"""Measure the workload structure that motivates sort reuse and pixel caching.

Four analyses over a short pan: how few walked Gaussians are significant,
how radiance concentrates in the top contributors, how pixel color converges
as rays share longer significant-ID prefixes, and how stable per-tile depth
orders are between consecutive sorts.
Run: python demos/05_characterize_workload.py
"""

import numpy as np

from splatlab import (
    CameraPose,
    RenderConfig,
    SceneSpec,
    TileGrid,
    bin_and_sort,
    build_charz_report,
    generate_synthetic_cloud,
    project_cloud,
    render_frame,
)

cloud = generate_synthetic_cloud(
    SceneSpec(count=3000, extent=1.0, scale_range=(0.02, 0.07),
              opacity_range=(0.25, 0.95)), seed=31)
poses = [CameraPose(position=(0.003 * i, 0.0, -3.0), orientation=(1, 0, 0, 0),
                    fx=220.0, fy=220.0, cx=64.0, cy=64.0, width=128, height=128)
         for i in range(4)]

config = RenderConfig(capture_contributions=True)
frames = [render_frame(cloud, pose, config) for pose in poses]
grid = TileGrid.for_image(128, 128)
tables = [bin_and_sort(project_cloud(cloud, pose), grid, pose) for pose in poses]
report = build_charz_report(frames, tables=tables)

print("significant fraction per frame (share of walked gaussians that matter):")
for row in report.significant:
    print(f"  frame {row['frame']}: {row['mean_fraction']:.3f} "
          f"(mean walk {row['mean_iterated']:.0f} gaussians)")

curve = report.contribution
print("\ncumulative radiance by contributor rank (mean over pixels):")
for frac in (0.01, 0.05, 0.1, 0.25, 0.5):
    share = float(np.interp(frac, np.linspace(0, 1, len(curve)), curve))
    print(f"  top {frac:>5.0%} of contributors -> {share:.1%} of radiance")

print("\ncolor error when answering a ray with a same-prefix ray (8-bit units):")
for row in report.color_difference:
    print(f"  k={row['k']}: {row['mean_abs_diff']:.2f} over {row['matched_pixels']} pixels")

print("\ndepth-order inversions between consecutive sorts:")
for row in report.inversions:
    print(f"  frames {row['frame_pair']}: {row['rate']:.5f} "
          f"({row['inversions']} of {row['pairs']} significant pairs)")
