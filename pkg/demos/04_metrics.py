"""Room-acoustic parameters from a synthetic impulse response.

A decaying noise burst at 16 kHz is turned into a 1 kHz echogram; its T60
should match the decay rate that generated it.
"""
import numpy as np

from dart.metrics import c50, compare, echogram_from_ir, edc_db, edt, t60

rate, t60_true = 16000, 0.6
rng = np.random.default_rng(0)
t = np.arange(int(1.5 * rate)) / rate
ir = rng.standard_normal(t.size) * 10 ** (-3 * t / t60_true)  # amplitude falls 60 dB in t60_true

e = echogram_from_ir(ir, T=1500)
print(f"energy conserved: {np.isclose(e.sum(), np.sum(ir ** 2))}")
print(f"T60 {t60(e):.3f} s (generated with {t60_true} s)   EDT {edt(e):.3f} s   C50 {c50(e):.2f} dB")

curve = edc_db(e)
for ms in (0, 100, 200, 300, 400, 500):
    print(f"decay curve at {ms:3d} ms: {curve[ms]:6.1f} dB")

# a second room with a slightly longer decay
ir2 = rng.standard_normal(t.size) * 10 ** (-3 * t / 0.66)
d = compare(echogram_from_ir(ir2, T=1500), e)
print(f"L1 {d.l1:.3f}   T60 error {d.t60_pct:.1f} %   EDT error {d.edt_s:.3f} s   C50 error {d.c50_db:.2f} dB")
