"""Dense statevector simulation for few-qubit RX/RZ/CNOT circuits.

Conventions
-----------
* Qubit 0 is the most significant bit of a basis-state index, so the state
  ``|q0 q1 ... q_{n-1}>`` sits at index ``q0 * 2**(n-1) + ... + q_{n-1}`` and a
  dense operator on qubit ``k`` is ``I x ... x G x ... x I`` with ``G`` at
  Kronecker position ``k``.
* ``RX(t) = [[cos t/2, -i sin t/2], [-i sin t/2, cos t/2]]``,
  ``RZ(t) = diag(exp(-i t/2), exp(i t/2))``.
* All simulation runs in complex128. States may carry leading batch axes:
  an array of shape ``(..., 2**n)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

GATE_KINDS = ("RX", "RZ", "CNOT")

PAULI_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]])

# Rows are the conjugated Y eigenvectors: outcome 0 <-> eigenvalue +1.
_Y_BASIS_CHANGE = np.array([[1.0, -1.0j], [1.0, 1.0j]]) / np.sqrt(2.0)


class CircuitError(ValueError):
    """Malformed gate or circuit description."""


@dataclass(frozen=True)
class GateOp:
    """One gate. Exactly one of ``param``, ``data`` or ``angle`` binds a rotation angle."""

    kind: str
    target: int
    control: int | None = None
    param: int | None = None
    data: int | None = None
    angle: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in GATE_KINDS:
            raise CircuitError(f"unknown gate kind {self.kind!r}")
        if self.target < 0:
            raise CircuitError(f"negative target qubit {self.target}")
        bindings = [b for b in (self.param, self.data, self.angle) if b is not None]
        if self.kind == "CNOT":
            if self.control is None or self.control == self.target or self.control < 0:
                raise CircuitError(f"CNOT needs a distinct control, got {self.control}->{self.target}")
            if bindings:
                raise CircuitError("CNOT takes no angle")
        else:
            if self.control is not None:
                raise CircuitError(f"{self.kind} has no control qubit")
            if len(bindings) != 1:
                raise CircuitError(f"{self.kind} needs exactly one angle source")
            if self.angle is not None and not np.isfinite(self.angle):
                raise CircuitError("fixed angle must be finite")

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.target,) if self.control is None else (self.control, self.target)

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind, "target": self.target}
        for key in ("control", "param", "data", "angle"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GateOp":
        return cls(**d)


@dataclass(frozen=True)
class CircuitSpec:
    """Ordered gate list over ``n_qubits`` with trainable and data slots.

    ``measured`` lists the qubits whose Pauli-Y expectation forms the circuit
    output (all qubits when omitted).
    """

    n_qubits: int
    gates: tuple[GateOp, ...]
    n_param_slots: int
    n_data_slots: int
    measured: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "gates", tuple(self.gates))
        if not self.measured:
            object.__setattr__(self, "measured", tuple(range(self.n_qubits)))
        else:
            object.__setattr__(self, "measured", tuple(self.measured))
        if not 1 <= self.n_qubits <= 10:
            raise CircuitError(f"n_qubits must be in [1, 10], got {self.n_qubits}")
        used = set()
        for g in self.gates:
            if any(q >= self.n_qubits for q in g.qubits):
                raise CircuitError(f"gate {g} acts outside {self.n_qubits} qubits")
            if g.param is not None:
                if not 0 <= g.param < self.n_param_slots:
                    raise CircuitError(f"param slot {g.param} out of range")
                used.add(g.param)
            if g.data is not None and not 0 <= g.data < self.n_data_slots:
                raise CircuitError(f"data slot {g.data} out of range")
        missing = sorted(set(range(self.n_param_slots)) - used)
        if missing:
            raise CircuitError(f"unreferenced parameter slots {missing}")
        if any(not 0 <= q < self.n_qubits for q in self.measured):
            raise CircuitError(f"measured qubits {self.measured} out of range")

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "n_param_slots": self.n_param_slots,
            "n_data_slots": self.n_data_slots,
            "measured": list(self.measured),
            "observable": "Y",
            "gates": [g.to_dict() for g in self.gates],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "CircuitSpec":
        if d.get("observable", "Y") != "Y":
            raise CircuitError("only Pauli-Y readout is supported")
        return cls(
            n_qubits=int(d["n_qubits"]),
            gates=tuple(GateOp.from_dict(g) for g in d["gates"]),
            n_param_slots=int(d["n_param_slots"]),
            n_data_slots=int(d["n_data_slots"]),
            measured=tuple(d.get("measured", ())),
        )

    @classmethod
    def from_json(cls, text: str) -> "CircuitSpec":
        return cls.from_dict(json.loads(text))


def zero_state(n_qubits: int) -> np.ndarray:
    state = np.zeros(2**n_qubits, dtype=complex)
    state[0] = 1.0
    return state


def _n_qubits_of(state: np.ndarray) -> int:
    dim = state.shape[-1]
    n = dim.bit_length() - 1
    if dim < 2 or 2**n != dim:
        raise CircuitError(f"state length {dim} is not a power of two")
    return n


def _split_qubit(state: np.ndarray, n: int, qubit: int) -> np.ndarray:
    """View ``(..., 2**n)`` as ``(..., 2, rest)`` with ``qubit`` on the 2-axis."""
    batch = state.shape[:-1]
    t = state.reshape(batch + (2,) * n)
    return np.moveaxis(t, len(batch) + qubit, len(batch))


def _merge_qubit(t: np.ndarray, batch: tuple, qubit: int) -> np.ndarray:
    t = np.moveaxis(t, len(batch), len(batch) + qubit)
    return t.reshape(batch + (-1,))


def _rotate(state: np.ndarray, kind: str, qubit: int, angle) -> np.ndarray:
    n = _n_qubits_of(state)
    batch = state.shape[:-1]
    t = _split_qubit(state, n, qubit)
    half = np.asarray(angle, dtype=float) / 2.0
    # broadcast angle over the (2, rest...) axes of each batch element
    half = half.reshape(np.shape(half) + (1,) * (n - 1))
    a0, a1 = np.take(t, 0, axis=len(batch)), np.take(t, 1, axis=len(batch))
    if kind == "RX":
        c, s = np.cos(half), np.sin(half)
        b0 = c * a0 - 1j * s * a1
        b1 = -1j * s * a0 + c * a1
    else:
        ph = np.exp(-1j * half)
        b0 = ph * a0
        b1 = np.conj(ph) * a1
    out = np.stack([b0, b1], axis=len(batch))
    return _merge_qubit(out, batch, qubit)


def _cnot(state: np.ndarray, control: int, target: int) -> np.ndarray:
    n = _n_qubits_of(state)
    batch = state.shape[:-1]
    t = state.reshape(batch + (2,) * n).copy()
    nb = len(batch)
    idx_c1 = [slice(None)] * (nb + n)
    idx_c1[nb + control] = 1
    sub = t[tuple(idx_c1)]
    # target axis index shifts down by one if it came after the removed control axis
    tax = nb + target - (1 if target > control else 0)
    t[tuple(idx_c1)] = np.flip(sub, axis=tax)
    return t.reshape(batch + (-1,))


def apply_gate(state: np.ndarray, gate: GateOp, angle=None) -> np.ndarray:
    """Apply ``gate`` to ``state`` (shape ``(..., 2**n)``) and return the new state.

    ``angle`` overrides the gate's binding; it may be a scalar or an array
    matching the state's batch shape. For gates with a fixed angle it may be
    omitted.
    """
    state = np.asarray(state, dtype=complex)
    n = _n_qubits_of(state)
    if any(q >= n for q in gate.qubits):
        raise CircuitError(f"gate {gate} out of range for {n} qubits")
    if gate.kind == "CNOT":
        return _cnot(state, gate.control, gate.target)
    if angle is None:
        if gate.angle is None:
            raise CircuitError(f"{gate.kind} gate bound to a slot needs an explicit angle")
        angle = gate.angle
    if not np.all(np.isfinite(angle)):
        raise ValueError("rotation angle must be finite")
    return _rotate(state, gate.kind, gate.target, angle)


def _as_batch(values, n: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != n:
        raise ValueError(f"{what}: expected trailing length {n}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what}: non-finite entries")
    return arr


def resolve_angles(spec: CircuitSpec, params, data) -> np.ndarray:
    """Angle of every gate, shape ``(n_gates, *batch)`` (zeros for CNOTs)."""
    params = _as_batch(params, spec.n_param_slots, "params") if spec.n_param_slots else np.asarray(params, float)
    data = _as_batch(data, spec.n_data_slots, "data") if spec.n_data_slots else np.asarray(data, float)
    if spec.n_param_slots == 0 and params.size:
        raise ValueError("circuit has no parameter slots")
    if spec.n_data_slots == 0 and data.size:
        raise ValueError("circuit has no data slots")
    shapes = []
    if spec.n_param_slots:
        shapes.append(params.shape[:-1])
    if spec.n_data_slots:
        shapes.append(data.shape[:-1])
    batch = np.broadcast_shapes(*shapes) if shapes else ()
    angles = np.zeros((len(spec.gates),) + batch)
    for i, g in enumerate(spec.gates):
        if g.param is not None:
            angles[i] = params[..., g.param]
        elif g.data is not None:
            angles[i] = data[..., g.data]
        elif g.angle is not None:
            angles[i] = g.angle
    return angles


def run_angles(spec: CircuitSpec, angles: np.ndarray, initial: np.ndarray | None = None) -> np.ndarray:
    """Simulate with explicit per-gate angles ``(n_gates, *batch)``."""
    batch = angles.shape[1:]
    if initial is None:
        state = np.broadcast_to(zero_state(spec.n_qubits), batch + (spec.dim,)).copy()
    else:
        state = np.asarray(initial, dtype=complex)
    for g, a in zip(spec.gates, angles):
        state = apply_gate(state, g, None if g.kind == "CNOT" else a)
    return state


def run_circuit(spec: CircuitSpec, params, data) -> np.ndarray:
    """Final state of ``spec`` applied to ``|0...0>``.

    ``params`` has trailing length ``n_param_slots`` and ``data`` trailing
    length ``n_data_slots``; any leading axes are treated as a batch.
    """
    return run_angles(spec, resolve_angles(spec, params, data))


def expectation_y(state: np.ndarray, qubit: int) -> np.ndarray | float:
    """``<psi| Y_qubit |psi>`` for a state of shape ``(..., 2**n)``."""
    state = np.asarray(state, dtype=complex)
    n = _n_qubits_of(state)
    if not 0 <= qubit < n:
        raise CircuitError(f"qubit {qubit} out of range for {n} qubits")
    t = _split_qubit(state, n, qubit)
    nb = state.ndim - 1
    a0 = np.take(t, 0, axis=nb).reshape(state.shape[:-1] + (-1,))
    a1 = np.take(t, 1, axis=nb).reshape(state.shape[:-1] + (-1,))
    val = 2.0 * np.imag(np.sum(np.conj(a0) * a1, axis=-1))
    return float(val) if np.ndim(val) == 0 else val


def expectations(spec: CircuitSpec, state: np.ndarray) -> np.ndarray:
    """Y expectations of all measured qubits, shape ``(*batch, n_measured)``."""
    return np.stack([np.asarray(expectation_y(state, q)) for q in spec.measured], axis=-1)


def y_basis_distribution(state: np.ndarray) -> np.ndarray:
    """Joint outcome probabilities for measuring every qubit in the Y basis.

    Outcome bit 0 on a qubit means eigenvalue +1; outcomes are indexed with
    qubit 0 as the most significant bit.
    """
    state = np.asarray(state, dtype=complex)
    n = _n_qubits_of(state)
    batch = state.shape[:-1]
    for q in range(n):
        t = _split_qubit(state, n, q)
        t = np.tensordot(_Y_BASIS_CHANGE, t, axes=([1], [len(batch)]))
        t = np.moveaxis(t, 0, len(batch))
        state = _merge_qubit(t, batch, q)
    return np.abs(state) ** 2


def _slot_occurrences(spec: CircuitSpec, kind: str) -> list[tuple[int, int]]:
    """(gate index, slot) for every gate bound to a ``kind`` slot."""
    out = []
    for i, g in enumerate(spec.gates):
        slot = g.param if kind == "param" else g.data
        if slot is not None:
            out.append((i, slot))
    return out


def shifted_angle_stack(angles: np.ndarray, gate_indices: Sequence[int]) -> np.ndarray:
    """Angles for the +pi/2 / -pi/2 shift of each listed gate.

    Returns shape ``(n_gates, 2, len(gate_indices), *batch)``.
    """
    k = len(gate_indices)
    stack = np.broadcast_to(angles[:, None, None], (angles.shape[0], 2, k) + angles.shape[1:]).copy()
    for j, gi in enumerate(gate_indices):
        stack[gi, 0, j] += np.pi / 2
        stack[gi, 1, j] -= np.pi / 2
    return stack


def _shift_jacobian(spec: CircuitSpec, params, data, kind: str, readout) -> np.ndarray:
    angles = resolve_angles(spec, params, data)
    occ = _slot_occurrences(spec, kind)
    n_slots = spec.n_param_slots if kind == "param" else spec.n_data_slots
    batch = angles.shape[1:]
    probe = readout(run_angles(spec, angles[:, ...]))
    out_shape = probe.shape[len(batch):]
    jac = np.zeros(batch + out_shape + (n_slots,))
    if not occ:
        return jac
    stack = shifted_angle_stack(angles, [gi for gi, _ in occ])
    vals = readout(run_angles(spec, stack))  # (2, n_occ, *batch, *out)
    d = 0.5 * (vals[0] - vals[1])
    for j, (_, slot) in enumerate(occ):
        jac[..., slot] += d[j]
    return jac


def circuit_jacobian(spec: CircuitSpec, params, data) -> np.ndarray:
    """Exact ``d<Y_k>/d theta_i``, shape ``(*batch, n_measured, n_param_slots)``.

    Uses the two-term parameter-shift rule per gate occurrence; slots shared by
    several gates accumulate by the chain rule.
    """
    return _shift_jacobian(spec, params, data, "param", lambda s: expectations(spec, s))


def circuit_data_jacobian(spec: CircuitSpec, params, data) -> np.ndarray:
    """Exact ``d<Y_k>/d x_j``, shape ``(*batch, n_measured, n_data_slots)``."""
    return _shift_jacobian(spec, params, data, "data", lambda s: expectations(spec, s))


def distribution_jacobian(spec: CircuitSpec, params, data) -> tuple[np.ndarray, np.ndarray]:
    """Y-basis outcome distribution and its exact parameter Jacobian.

    Returns ``(p, dp)`` with ``p`` of shape ``(*batch, 2**n)`` and ``dp`` of
    shape ``(*batch, 2**n, n_param_slots)``. Outcome probabilities are
    expectations of projectors, so the parameter-shift rule is exact here too.
    """
    p = y_basis_distribution(run_circuit(spec, params, data))
    dp = _shift_jacobian(spec, params, data, "param", y_basis_distribution)
    return p, dp


def unitary_of(spec: CircuitSpec, params, data) -> np.ndarray:
    """Dense circuit unitary; column ``j`` is the circuit applied to basis state ``j``."""
    angles = resolve_angles(spec, params, data)
    if angles.ndim != 1:
        raise ValueError("unitary_of takes a single (unbatched) parameter/data point")
    eye = np.eye(spec.dim, dtype=complex)
    cols = run_angles(spec, np.broadcast_to(angles[:, None], (len(spec.gates), spec.dim)), initial=eye)
    return cols.T


def equivalent_up_to_phase(u: np.ndarray, v: np.ndarray, tol: float = 1e-9) -> bool:
    """True iff ``|tr(U^dagger V)| / d >= 1 - tol``."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape or u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError(f"incompatible operator shapes {u.shape} and {v.shape}")
    overlap = abs(np.trace(u.conj().T @ v)) / u.shape[0]
    return bool(overlap >= 1.0 - tol)


def dense_gate_matrix(gate: GateOp, n_qubits: int, angle: float | None = None) -> np.ndarray:
    """Full ``2**n x 2**n`` matrix of ``gate`` built from Kronecker products."""
    eye = np.eye(2, dtype=complex)
    if gate.kind == "CNOT":
        p0 = np.diag([1.0, 0.0]).astype(complex)
        p1 = np.diag([0.0, 1.0]).astype(complex)
        x = np.array([[0, 1], [1, 0]], dtype=complex)
        a = [eye] * n_qubits
        b = [eye] * n_qubits
        a[gate.control] = p0
        b[gate.control] = p1
        b[gate.target] = x
        return _kron_all(a) + _kron_all(b)
    theta = gate.angle if angle is None else angle
    if gate.kind == "RX":
        c, s = np.cos(theta / 2), np.sin(theta / 2)
        m = np.array([[c, -1j * s], [-1j * s, c]])
    else:
        m = np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])
    ops = [eye] * n_qubits
    ops[gate.target] = m
    return _kron_all(ops)


def pauli_y_on(qubit: int, n_qubits: int) -> np.ndarray:
    ops = [np.eye(2, dtype=complex)] * n_qubits
    ops[qubit] = PAULI_Y
    return _kron_all(ops)


def _kron_all(mats: Iterable[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out
