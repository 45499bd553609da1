"""Time-aliasing in the truncated frequency-domain solve, with and without damping.

Two large parallel reflectors keep ringing past the 64-sample horizon.  With
gamma = 1 the late energy folds back onto the start of the echogram; sampling
the spectrum outside the unit circle suppresses it.
"""
import numpy as np

from dart.geometry import build_direction_grid, subdivide
from dart.materials import init_p
from dart.oracle import echogram_oracle
from dart.precompute import precompute
from dart.scenes import facing_squares
from dart.spectral import SolverConfig
from dart.transport import ReceiverConfig, SourceConfig, render

pre = precompute(subdivide(facing_squares(10.0, 6.0), 5.0), build_direction_grid(4, 4),
                 K=16, M=1024, M_geometry=4096, seed=2)
model = init_p(pre.patches.n_patches, pre.grid, "reflection", alpha=0.95)
src = SourceConfig((5.0, 5.0, 2.0))
rcv = ReceiverConfig((5.5, 4.5, 4.0), n_ray=4000)
T, N = 64, 40

long = echogram_oracle(pre, model, src, rcv, SolverConfig(T, 1.0, N), seed=1, horizon=30 * T, full=True)
ref = long.energy
print(f"share of energy arriving after {T} ms: {ref[T:].sum() / ref.sum():.2%}")

for gamma in (1.0, 1e-1, 1e-2, 1e-3):
    e = render(pre, model, src, rcv, SolverConfig(T, gamma, N), seed=1).energy
    err = np.sum((e - ref[:T]) ** 2)
    print(f"gamma {gamma:<6g} fold-back error {10 * np.log10(err):7.1f} dB")
