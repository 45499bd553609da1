"""Render an echogram in a shoebox room and compare it with the time-domain reference.

Run from the repository root:  python demos/01_forward_render.py
"""
import time

import numpy as np

from dart.geometry import build_direction_grid, subdivide
from dart.materials import init_p
from dart.metrics import c50, edt, t60
from dart.oracle import echogram_oracle
from dart.precompute import precompute
from dart.scenes import box_mesh
from dart.spectral import SolverConfig
from dart.transport import ReceiverConfig, SourceConfig, render

room = box_mesh((4.0, 3.0, 2.5))
patches = subdivide(room, 1.25)
grid = build_direction_grid(4, 4)

t0 = time.perf_counter()
pre = precompute(patches, grid, K=16, M=2048, M_geometry=4096, seed=0)
print(f"{patches.n_patches} patches, {pre.n_rad} radiances, "
      f"{pre.visibility.nnz} visibility entries ({time.perf_counter() - t0:.1f} s)")

# every wall: 80 % reflective, energy split over the four scattering templates
model = init_p(patches.n_patches, grid, "all", alpha=0.8)
src = SourceConfig((1.0, 1.2, 1.4))
rcv = ReceiverConfig((3.1, 1.9, 1.2))
cfg = SolverConfig(T=320, gamma=1e-3, n_order=40)

t0 = time.perf_counter()
res = render(pre, model, src, rcv, cfg, seed=0)
t_fast = time.perf_counter() - t0
t0 = time.perf_counter()
ref = echogram_oracle(pre, model, src, rcv, cfg, seed=0)
t_ref = time.perf_counter() - t0

gap = np.linalg.norm(res.energy - ref.energy) / np.linalg.norm(ref.energy)
print(f"spectral solver {t_fast:.2f} s, time-domain reference {t_ref:.2f} s, relative gap {gap:.1e}")
print(f"direct energy {res.direct.sum():.4g}, reflected energy {res.reflected.sum():.4g}")
print(f"T60 {t60(res.energy):.3f} s   EDT {edt(res.energy):.3f} s   C50 {c50(res.energy):.2f} dB")

# coarse text plot of the first 100 ms in dB
db = 10 * np.log10(np.maximum(res.energy[:100], 1e-12) / res.energy.max())
for n in range(0, 100, 5):
    print(f"{n:3d} ms {'#' * int(max(0.0, 60 + db[n]) / 2)}")
