"""Recover wall reflectivity from a dozen synthetic echograms.

Echograms are rendered with every wall at alpha = 0.7, then a parametric
model starting from alpha = 0.4 is fitted to them with AdamW.
"""
from dart.geometry import build_direction_grid, subdivide
from dart.materials import init_p
from dart.optim import FitConfig, Measurement, fit
from dart.precompute import precompute
from dart.raytrace import make_rng
from dart.scenes import box_mesh
from dart.spectral import SolverConfig
from dart.transport import ReceiverConfig, SourceConfig, render

pre = precompute(subdivide(box_mesh((3.0, 3.0, 3.0)), 3.0), build_direction_grid(4, 4),
                 K=16, M=1024, M_geometry=4096, seed=4)
cfg = SolverConfig(T=160, gamma=1e-3, n_order=30)
truth = init_p(pre.patches.n_patches, pre.grid, "reflection", alpha=0.7)

rng = make_rng(9, 99)
data = []
for k in range(16):
    src = SourceConfig(tuple(rng.uniform(0.4, 2.6, 3)), n_ray=2000)
    rcv = ReceiverConfig(tuple(rng.uniform(0.4, 2.6, 3)), n_ray=2000)
    data.append(Measurement(src, rcv, render(pre, truth, src, rcv, cfg, seed=3, key=k).energy, f"m{k}"))
train, val = data[:12], data[12:]


def show(row):
    print(f"step {row['step']:4d}  lr {row['lr']:.3f}  loss {row['total']:.4f}  val L1 {row['val_l1']:.3e}")


start = init_p(pre.patches.n_patches, pre.grid, "reflection", alpha=0.4)
res = fit(pre, start, train, FitConfig(steps=300, lr=0.05, n_validations=10), cfg,
          validation=val, seed=3, progress=show)
alpha = res.best.alphas()
print(f"best step {res.best_step}: mean alpha {alpha.mean():.4f} "
      f"(range {alpha.min():.3f} to {alpha.max():.3f}), true value 0.7")
print("component weights of patch 0:", {c: round(float(b), 3) for c, b in zip(res.best.components, res.best.betas()[0])})
