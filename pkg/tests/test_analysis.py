import csv
import json

import numpy as np
import pytest

from qrul import analysis as A
from qrul import qsim
from qrul.qdi import build_qdi_circuit
from qrul.qsim import CircuitSpec, GateOp


def rx_y_circuit():
    return CircuitSpec(1, (GateOp("RX", 0, param=0),), 1, 0, (0,))


# Fisher information -------------------------------------------------------------------

def test_single_qubit_fim_closed_form():
    t = np.pi / 4
    p_plus, p_minus = (1 - np.sin(t)) / 2, (1 + np.sin(t)) / 2
    dp = -np.cos(t) / 2
    expected = dp**2 * (1 / p_plus + 1 / p_minus)
    f = A.fim_at([t], np.zeros((1, 0)), rx_y_circuit())
    assert f.shape == (1, 1)
    assert f[0, 0] == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(1.0)


def test_fim_matches_score_covariance_by_fd(rng):
    spec = build_qdi_circuit()
    th, x = rng.uniform(-np.pi, np.pi, 8), rng.normal(size=(3, 4))

    def logp(t):
        return np.log(qsim.y_basis_distribution(qsim.run_circuit(spec, np.broadcast_to(t, (3, 8)), x)))

    h = 1e-6
    score = np.stack([(logp(th + h * e) - logp(th - h * e)) / (2 * h) for e in np.eye(8)], axis=-1)
    p = np.exp(logp(th))
    ref = np.einsum("bo,boi,boj->ij", p, score, score) / 3
    np.testing.assert_allclose(A.fim_at(th, x), ref, atol=1e-6)


def test_fim_requires_samples():
    with pytest.raises(ValueError):
        A.fim_at(np.zeros(8), np.zeros((0, 4)))


def test_fim_spectrum_invariants():
    rep = A.fim_spectrum(8, 6, seed=3)
    assert rep.matrices.shape == (8, 8, 8)
    for f in rep.matrices:
        assert np.max(np.abs(f - f.T)) < 1e-10
        assert np.linalg.eigvalsh(f).min() >= -1e-10
        assert np.trace(f / np.trace(f)) == pytest.approx(1.0, abs=1e-9)
    assert np.trace(rep.average_normalized) == pytest.approx(1.0, abs=1e-9)
    frac, edges = rep.histogram(10)
    assert frac.sum() == pytest.approx(1.0) and len(edges) == 11
    assert 0 <= rep.small_fraction() <= 1


def test_fim_spectrum_deterministic_and_job_independent():
    a = A.fim_spectrum(4, 5, seed=11)
    b = A.fim_spectrum(4, 5, seed=11, jobs=2)
    assert a.matrices.tobytes() == b.matrices.tobytes()


def test_zero_trace_fims_skipped():
    # a circuit with no data dependence and theta-independent outcomes has zero FIM
    spec = CircuitSpec(1, (GateOp("RZ", 0, param=0),), 1, 0, (0,))
    rep = A.fim_spectrum(3, 2, seed=0, spec=spec)
    assert rep.skipped == 3 and not rep.average_normalized.any()


# Fourier ----------------------------------------------------------------------------------

def test_component_count():
    assert A.N_COMPONENTS == 161 == 2 * 3**4 - 1
    assert len(A.component_labels()) == 161
    assert tuple(A.FREQS[A.ZERO_FREQ]) == (0, 0, 0, 0)


def test_theta_zero_spectrum_vanishes():
    s = A.fourier_spectrum(np.zeros(8), 0)
    assert np.max(np.abs(s.coefficients)) < 1e-12


@pytest.mark.parametrize("output", [0, 1, 2, 3, "sum"])
def test_symmetry_bandlimit_and_alias(rng, output):
    th = rng.uniform(-np.pi, np.pi, 8)
    s = A.fourier_spectrum(th, output)
    assert s.symmetry_error() < 1e-9
    assert abs(s.coefficient((0, 0, 0, 0)).imag) < 1e-9
    assert s.out_of_band < 1e-9
    c7, leak7 = A.fourier_batch(th[None], output, k=7)
    assert np.max(np.abs(c7[0] - s.coefficients)) < 1e-9 and leak7[0] < 1e-9


def test_fourier_reconstructs_function(rng):
    th = rng.uniform(-np.pi, np.pi, 8)
    s = A.fourier_spectrum(th, 2)
    from qrul.qdi import qdi_forward
    for x in rng.uniform(-5, 5, (5, 4)):
        val = np.sum(s.coefficients * np.exp(1j * A.FREQS @ x))
        assert val.real == pytest.approx(qdi_forward(th, x)[2], abs=1e-12)
        assert abs(val.imag) < 1e-12


def test_fourier_input_checks():
    with pytest.raises(ValueError):
        A.fourier_spectrum(np.zeros(12), 0)
    with pytest.raises(ValueError):
        A.fourier_spectrum(np.zeros(8), 4)
    with pytest.raises(ValueError):
        A.accessibility(10, threshold=0.0)


def test_accessibility_monotone_and_deterministic():
    rep = A.accessibility(60, seed=2, output=0)
    counts = [rep.count_at(t) for t in (1e-12, 1e-6, 1e-3, 1e-2, 1e-1, 1.0)]
    assert counts == sorted(counts, reverse=True)
    again = A.accessibility(60, seed=2, output=0, jobs=2)
    assert again.mean_abs.tobytes() == rep.mean_abs.tobytes()
    assert A.accessibility_count(60, seed=2, output=0) == (rep.accessible, 161)


def test_structural_zeros_never_accessible():
    rep = A.accessibility(100, seed=0, output="sum")
    zero = rep.mean_abs < 1e-12
    assert zero.sum() == 161 - rep.accessible
    assert rep.count_at(1e-15) == rep.accessible


# essentiality and equivalence ----------------------------------------------------------------

def test_qdi_all_parameters_essential():
    rep = A.essential_parameters(200, seed=0)
    assert rep.n_essential == 8 and len(rep.max_abs_grad) == 8


def test_padded_parameter_flagged():
    rep = A.essential_parameters(100, seed=0, spec=A.padded_qdi_circuit())
    assert rep.essential.tolist() == [True] * 8 + [False]


def test_verify_reduction_cases():
    spec = build_qdi_circuit()
    assert A.verify_reduction(spec, spec, None, 5)
    gates = list(spec.gates)
    i = next(k for k, g in enumerate(gates) if g.kind == "RZ")
    swapped = list(gates)
    swapped[i], swapped[i + 1] = swapped[i + 1], swapped[i]
    assert A.verify_reduction(spec, CircuitSpec(4, tuple(swapped), 8, 4, spec.measured), None, 5)
    j = next(k for k, g in enumerate(gates) if g.kind == "CNOT")
    fewer = CircuitSpec(4, tuple(gates[:j] + gates[j + 1:]), 8, 4, spec.measured)
    assert not A.verify_reduction(spec, fewer, None, 5)
    with pytest.raises(qsim.CircuitError):
        A.verify_reduction(spec, A.padded_qdi_circuit(), None, 1)


def test_param_map_sign_offset():
    # RX(t) equals RX(-t + 2 pi) up to a global phase of -1
    spec = build_qdi_circuit()
    pmap = [(k, -1.0, 2 * np.pi) if k == 0 else (k, 1.0, 0.0) for k in range(8)]
    assert not A.verify_reduction(spec, spec, pmap, 3)
    flipped = [(k, 1.0, 2 * np.pi) if k == 0 else (k, 1.0, 0.0) for k in range(8)]
    assert A.verify_reduction(spec, spec, flipped, 3)


# writers --------------------------------------------------------------------------------

def test_writers(tmp_path):
    A.write_fisher(A.fim_spectrum(3, 3, seed=0), tmp_path)
    A.write_fourier(A.accessibility(20, seed=0), tmp_path)
    A.write_essentiality(A.essential_parameters(20, seed=0), tmp_path)
    with open(tmp_path / "fisher_eigenvalues.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 24
    with open(tmp_path / "fisher_avg_matrix.csv") as fh:
        assert len(list(csv.reader(fh))) == 9
    with open(tmp_path / "fourier_coefficients.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 161 and {"w0", "mean_abs", "accessible"} <= set(rows[0])
    with open(tmp_path / "essentiality.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 8
    assert json.loads((tmp_path / "fourier_summary.json").read_text())["total"] == 161
