"""Statevector simulator walk-through: gates, Y readout, gradients, unitaries."""

import numpy as np

from qrul import qsim
from qrul.qsim import CircuitSpec, GateOp

# A single RX(pi) flips |0> to -i|1>.
psi = qsim.apply_gate(qsim.zero_state(1), GateOp("RX", 0, angle=np.pi))
print("RX(pi)|0> =", np.round(psi, 12))

# Qubit 0 is the most significant bit: CNOT(0 -> 1) maps |10> to |11>.
psi = np.zeros(4, complex)
psi[0b10] = 1
print("CNOT|10> =", qsim.apply_gate(psi, GateOp("CNOT", 1, control=0)).real)

# Circuits refer to trainable "param" slots and input "data" slots.
spec = CircuitSpec(
    n_qubits=2,
    gates=(GateOp("RX", 0, param=0), GateOp("RZ", 0, data=0), GateOp("CNOT", 1, control=0), GateOp("RX", 1, param=1)),
    n_param_slots=2,
    n_data_slots=1,
    measured=(0, 1),
)
theta, x = np.array([0.4, -1.1]), np.array([0.9])
state = qsim.run_circuit(spec, theta, x)
print("<Y_0>, <Y_1> =", qsim.expectations(spec, state))
print("Y-basis outcome distribution:", np.round(qsim.y_basis_distribution(state), 4))

# Exact gradients by the parameter-shift rule, checked against finite differences.
jac = qsim.circuit_jacobian(spec, theta, x)
h = 1e-6
fd = np.stack([(qsim.expectations(spec, qsim.run_circuit(spec, theta + h * e, x))
                - qsim.expectations(spec, qsim.run_circuit(spec, theta - h * e, x))) / (2 * h) for e in np.eye(2)], -1)
print("parameter-shift Jacobian:\n", jac)
print("max |shift - finite difference| =", np.abs(jac - fd).max())

# Whole-circuit unitaries compare equal up to a global phase.
u = qsim.unitary_of(spec, theta, x)
print("unitary?", np.allclose(u.conj().T @ u, np.eye(4)))
print("equal to itself times e^{i pi/3}:", qsim.equivalent_up_to_phase(u, u * np.exp(1j * np.pi / 3)))
