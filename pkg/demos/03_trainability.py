"""Fisher information spectrum and parameter essentiality of the QDI layer."""

import numpy as np

from qrul import analysis as A
from qrul.qdi import build_qdi_circuit

rep = A.fim_spectrum(n_theta=50, n_x=50, seed=0)
print("eigenvalue range:", rep.eigenvalues.min(), "to", rep.eigenvalues.max())
print("fraction of eigenvalues < 1e-3 x per-draw max:", rep.small_fraction())

frac, edges = rep.histogram(bins=10)
for lo, hi, f in zip(edges[:-1], edges[1:], frac):
    print(f"  [{lo:.1f}, {hi:.1f}) {'#' * int(round(60 * f))}")

np.set_printoptions(precision=3, suppress=True)
print("averaged trace-normalized FIM:\n", rep.average_normalized)

ess = A.essential_parameters(500, seed=0)
print("max |d<Y>/d theta_i|:", np.round(ess.max_abs_grad, 3), "->", ess.n_essential, "of 8 essential")

padded = A.essential_parameters(500, seed=0, spec=A.padded_qdi_circuit())
print("with an extra RX on an idle fifth qubit:", padded.essential.astype(int))

# Rewrites can be checked numerically: swapping two RZ gates on different qubits is harmless,
# dropping a CNOT is not.
spec = build_qdi_circuit()
gates = list(spec.gates)
i = next(k for k, g in enumerate(gates) if g.kind == "RZ")
gates[i], gates[i + 1] = gates[i + 1], gates[i]
swapped = type(spec)(4, tuple(gates), 8, 4, spec.measured)
print("RZ swap equivalent:", A.verify_reduction(spec, swapped))
j = next(k for k, g in enumerate(spec.gates) if g.kind == "CNOT")
dropped = type(spec)(4, spec.gates[:j] + spec.gates[j + 1:], 8, 4, spec.measured)
print("CNOT removal equivalent:", A.verify_reduction(spec, dropped))
