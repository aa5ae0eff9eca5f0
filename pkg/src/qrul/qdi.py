"""Quantum Depth-Infused (QDI) layer: a 4-qubit map R^4 -> R^4.

Gate order for ``n_reps`` repetitions::

    RX(t0..t3) . CNOT ring
    repeat n_reps times:  RZ(x0..x3) . RX(t_{4r}..t_{4r+3}) . CNOT ring

with the ring ``CNOT(0->1), CNOT(1->2), CNOT(2->3), CNOT(3->0)`` and Pauli-Y
read out on every qubit. The same four data slots are re-encoded in every
repetition.

:class:`QdiKernel` is the fast path used in training. It exploits the block
structure: every variational block is a fixed 16x16 unitary for given angles
and every encoding block is diagonal, so a batch of feature vectors costs a
few dense matvecs. It is cross-checked against the gate-level simulator in
:mod:`qrul.qsim`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .qsim import CircuitSpec, GateOp, dense_gate_matrix, pauli_y_on

N_QUBITS = 4
DIM = 2**N_QUBITS
RING = ((0, 1), (1, 2), (2, 3), (3, 0))


@dataclass(frozen=True)
class QdiLayout:
    n_reps: int = 1

    def __post_init__(self) -> None:
        if self.n_reps < 1:
            raise ValueError(f"n_reps must be >= 1, got {self.n_reps}")

    @property
    def n_params(self) -> int:
        return N_QUBITS * (1 + self.n_reps)


def build_qdi_circuit(layout: QdiLayout = QdiLayout()) -> CircuitSpec:
    gates: list[GateOp] = []

    def variational(offset: int) -> None:
        gates.extend(GateOp("RX", q, param=offset + q) for q in range(N_QUBITS))
        gates.extend(GateOp("CNOT", t, control=c) for c, t in RING)

    variational(0)
    for r in range(layout.n_reps):
        gates.extend(GateOp("RZ", q, data=q) for q in range(N_QUBITS))
        variational(N_QUBITS * (r + 1))
    return CircuitSpec(
        n_qubits=N_QUBITS,
        gates=tuple(gates),
        n_param_slots=layout.n_params,
        n_data_slots=N_QUBITS,
        measured=tuple(range(N_QUBITS)),
    )


@lru_cache(maxsize=None)
def _constants():
    ring = np.eye(DIM, dtype=complex)
    for c, t in RING:
        ring = dense_gate_matrix(GateOp("CNOT", t, control=c), N_QUBITS) @ ring
    ys = np.stack([pauli_y_on(q, N_QUBITS) for q in range(N_QUBITS)])
    # z[b, j] = +1 if qubit j is |0> in basis state b else -1
    bits = (np.arange(DIM)[:, None] >> (N_QUBITS - 1 - np.arange(N_QUBITS))[None, :]) & 1
    z = 1.0 - 2.0 * bits
    return ring, ys, z


def _rx(theta: np.ndarray) -> np.ndarray:
    """Stack of RX matrices, shape ``theta.shape + (2, 2)``."""
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    m = np.empty(np.shape(theta) + (2, 2), dtype=complex)
    m[..., 0, 0] = c
    m[..., 1, 1] = c
    m[..., 0, 1] = -1j * s
    m[..., 1, 0] = -1j * s
    return m


def _kron4(a, b, c, d):
    """Batched Kronecker product of four 2x2 stacks."""
    ab = np.einsum("...ij,...kl->...ikjl", a, b).reshape(a.shape[:-2] + (4, 4))
    abc = np.einsum("...ij,...kl->...ikjl", ab, c).reshape(a.shape[:-2] + (8, 8))
    return np.einsum("...ij,...kl->...ikjl", abc, d).reshape(a.shape[:-2] + (DIM, DIM))


def _block(theta4: np.ndarray):
    """Unitary of ``RX layer . ring`` and its four angle derivatives.

    ``theta4`` has shape ``(G, 4)``; returns ``(G, 16, 16)`` and ``(G, 4, 16, 16)``.
    """
    ring, _, _ = _constants()
    rx = _rx(theta4)  # (G, 4, 2, 2)
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    drx = -0.5j * (x @ rx)
    layer = _kron4(rx[:, 0], rx[:, 1], rx[:, 2], rx[:, 3])
    dlayers = []
    for q in range(N_QUBITS):
        f = [rx[:, k] if k != q else drx[:, k] for k in range(N_QUBITS)]
        dlayers.append(_kron4(*f))
    dlayer = np.stack(dlayers, axis=1)
    return ring @ layer, ring @ dlayer


class QdiKernel:
    """Precomputed QDI circuits for a stack of ``G`` parameter vectors.

    ``params`` has shape ``(G, 4 * (1 + n_reps))``. :meth:`forward` maps
    features ``(G, B, 4)`` to expectations ``(G, B, 4)``; :meth:`vjp` returns
    the vector-Jacobian products for both parameters and features.
    """

    def __init__(self, params: np.ndarray, n_reps: int = 1):
        params = np.atleast_2d(np.asarray(params, dtype=float))
        if params.shape[-1] != N_QUBITS * (1 + n_reps):
            raise ValueError(f"expected {N_QUBITS * (1 + n_reps)} angles, got {params.shape[-1]}")
        if not np.all(np.isfinite(params)):
            raise ValueError("QDI parameters must be finite")
        self.params = params
        self.n_reps = n_reps
        self.blocks = []
        self.dblocks = []
        for r in range(1 + n_reps):
            u, du = _block(params[:, 4 * r : 4 * r + 4])
            self.blocks.append(u)
            self.dblocks.append(du)
        # initial block acts on |0000>: keep column 0 only
        self.psi0 = self.blocks[0][:, :, 0]
        self.dpsi0 = self.dblocks[0][:, :, :, 0]

    def _phases(self, x: np.ndarray) -> np.ndarray:
        _, _, z = _constants()
        return np.exp(-0.5j * (x @ z.T))

    def states(self, x: np.ndarray):
        """Intermediate states needed for the backward pass."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("QDI features must be finite")
        d = self._phases(x)  # (G, B, 16)
        psi = np.broadcast_to(self.psi0[:, None, :], d.shape)
        encoded = []
        for r in range(1, 1 + self.n_reps):
            phi = d * psi
            encoded.append(phi)
            psi = phi @ np.swapaxes(self.blocks[r], -1, -2)
        return d, encoded, psi

    def forward(self, x: np.ndarray) -> np.ndarray:
        _, _, psi = self.states(x)
        return y_expectations(psi)

    def vjp(self, x: np.ndarray, upstream: np.ndarray, cache=None):
        """Return ``(outputs, grad_params (G, P), grad_features (G, B, 4))``.

        Parameter gradients are summed over the batch axis.
        """
        d, encoded, psi = self.states(x) if cache is None else cache
        _, ys, z = _constants()
        out = y_expectations(psi)
        # lam = sum_k u_k Y_k psi: adjoint of the scalar upstream . <Y>
        ypsi = (psi[:, :, None, None, :] @ np.swapaxes(ys, -1, -2))[..., 0, :]  # (G, B, 4, 16)
        lam = np.einsum("gbk,gbki->gbi", upstream, ypsi)
        g_params = np.zeros_like(self.params)
        g_x = np.zeros(d.shape[:-1] + (N_QUBITS,))
        for r in range(self.n_reps, 0, -1):
            phi = encoded[r - 1]
            # sum_b lam_b^H dB phi_b = <dB, lam^H phi> (elementwise over the 16x16 matrix)
            outer = np.swapaxes(lam.conj(), -1, -2) @ phi
            g_params[:, 4 * r : 4 * r + 4] += 2.0 * np.real(np.einsum("gqij,gij->gq", self.dblocks[r], outer))
            lam = lam @ self.blocks[r].conj()
            g_x += np.imag(lam.conj() * phi) @ z
            lam = d.conj() * lam
        g_params[:, 0:4] += 2.0 * np.real(np.einsum("gi,gqi->gq", lam.conj().sum(axis=1), self.dpsi0))
        return out, g_params, g_x


def y_expectations(psi: np.ndarray) -> np.ndarray:
    """``<Y_q>`` for ``psi`` of shape ``(..., 16)`` -> ``(..., 4)``."""
    t = psi.reshape(psi.shape[:-1] + (2,) * N_QUBITS)
    nb = psi.ndim - 1
    out = []
    for q in range(N_QUBITS):
        a0 = np.take(t, 0, axis=nb + q)
        a1 = np.take(t, 1, axis=nb + q)
        out.append(2.0 * np.imag(np.sum((a0.conj() * a1).reshape(psi.shape[:-1] + (-1,)), axis=-1)))
    return np.stack(out, axis=-1)


def qdi_forward(params, features, n_reps: int = 1) -> np.ndarray:
    """Expectations ``<Y_0..Y_3>`` for one parameter vector.

    ``features`` may be a single 4-vector or a batch ``(B, 4)``.
    """
    features = np.asarray(features, dtype=float)
    kernel = QdiKernel(np.asarray(params, dtype=float)[None], n_reps)
    out = kernel.forward(features.reshape(1, -1, N_QUBITS))[0]
    return out.reshape(features.shape)


def qdi_backward(params, features, upstream, n_reps: int = 1):
    """``(grad_params, grad_features)`` for the scalar ``upstream . qdi_forward``.

    For batched features the parameter gradient is summed over the batch.
    """
    features = np.asarray(features, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    kernel = QdiKernel(np.asarray(params, dtype=float)[None], n_reps)
    _, gp, gx = kernel.vjp(features.reshape(1, -1, N_QUBITS), upstream.reshape(1, -1, N_QUBITS))
    return gp[0], gx[0].reshape(features.shape)
