"""The 4-qubit QDI layer: structure, degenerate point, and its Fourier spectrum."""

import numpy as np

from qrul import analysis as A
from qrul.qdi import QdiLayout, build_qdi_circuit, qdi_backward, qdi_forward

spec = build_qdi_circuit(QdiLayout(n_reps=1))
print(f"{len(spec.gates)} gates, {spec.n_param_slots} angles, {spec.n_data_slots} inputs")
for g in spec.gates:
    print("  ", g.kind, "q", g.target, "" if g.control is None else f"ctrl {g.control}",
          "" if g.param is None else f"theta[{g.param}]", "" if g.data is None else f"x[{g.data}]")

rng = np.random.default_rng(0)
theta = rng.uniform(-np.pi, np.pi, 8)
x = rng.normal(size=4)
print("outputs <Y_0..Y_3>:", np.round(qdi_forward(theta, x), 6))

# With every angle at zero the register never leaves |0000> up to phase, so <Y> = 0.
print("theta = 0 outputs:", qdi_forward(np.zeros(8), rng.normal(size=(3, 4))))

gp, gx = qdi_backward(theta, x, np.ones(4))
print("d(sum <Y>)/d theta:", np.round(gp, 4))
print("d(sum <Y>)/d x:    ", np.round(gx, 4))

# Every input is encoded once, so the readout is a trigonometric polynomial
# with frequencies in {-1, 0, 1}^4: 81 complex coefficients, 161 real components.
spec_f = A.fourier_spectrum(theta, output="sum")
big = np.argsort(-np.abs(spec_f.coefficients))[:5]
for i in big:
    print("  w =", tuple(A.FREQS[i]), "c =", np.round(spec_f.coefficients[i], 4))
print("conjugate symmetry error:", spec_f.symmetry_error(), "out-of-band:", spec_f.out_of_band)

for out in ("sum", 0, 1, 2, 3):
    rep = A.accessibility(300, seed=0, output=out)
    print(f"readout {out!s:>3}: {rep.accessible}/161 components reachable")
