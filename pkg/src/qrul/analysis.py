"""Diagnostics of the QDI circuit: Fisher information, Fourier spectrum,
parameter essentiality and numerical equivalence of circuit rewrites.

Random parameters are drawn uniformly from ``[-pi, pi]``. Each draw gets its
own generator spawned from ``SeedSequence(seed)``, so results do not depend on
how draws are split across worker processes.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import qsim
from .qdi import N_QUBITS, QdiKernel, QdiLayout, build_qdi_circuit

log = logging.getLogger(__name__)

P_FLOOR = 1e-12
ESSENTIAL_THRESHOLD = 1e-4
ACCESS_THRESHOLD = 1e-6
FREQS = np.array(list(itertools.product((-1, 0, 1), repeat=N_QUBITS)))  # (81, 4)
ZERO_FREQ = 40  # index of (0, 0, 0, 0) in FREQS
N_COMPONENTS = 2 * len(FREQS) - 1


def _rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))
    return [fn(it) for it in items]


def random_theta(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.uniform(-np.pi, np.pi, n)


# Fisher information ------------------------------------------------------------

def fim_at(theta, x_samples, spec: qsim.CircuitSpec | None = None) -> np.ndarray:
    """Fisher information of the joint Y-basis outcome distribution.

    ``F = mean_x sum_y dp dp^T / p`` with exact parameter-shift ``dp``;
    outcomes with ``p < 1e-12`` are skipped.
    """
    spec = build_qdi_circuit() if spec is None else spec
    x = np.asarray(x_samples, dtype=float)
    x = x.reshape(len(x), spec.n_data_slots) if x.ndim else x.reshape(0, spec.n_data_slots)
    if len(x) == 0:
        raise ValueError("x_samples must be nonempty")
    theta = np.asarray(theta, dtype=float)
    p, dp = qsim.distribution_jacobian(spec, np.broadcast_to(theta, (len(x),) + theta.shape), x)
    keep = p >= P_FLOOR
    w = np.where(keep, 1.0 / np.where(keep, p, 1.0), 0.0)
    f = np.einsum("bo,boi,boj->ij", w, dp, dp) / len(x)
    return 0.5 * (f + f.T)


@dataclass
class FimReport:
    matrices: np.ndarray  # (n_theta, P, P)
    eigenvalues: np.ndarray  # (n_theta, P), ascending
    average_normalized: np.ndarray  # (P, P)
    n_theta: int
    n_x: int
    seed: int
    skipped: int = 0
    small_ratio: float = 1e-3

    @property
    def normalized_eigenvalues(self) -> np.ndarray:
        tr = self.eigenvalues.sum(axis=1, keepdims=True)
        return np.divide(self.eigenvalues, tr, out=np.zeros_like(self.eigenvalues), where=tr > 0)

    def small_fraction(self) -> float:
        """Fraction of eigenvalues below ``small_ratio`` times their draw's largest eigenvalue."""
        top = self.eigenvalues.max(axis=1, keepdims=True)
        return float(np.mean(self.eigenvalues < self.small_ratio * top))

    def histogram(self, bins: int = 20):
        """Histogram of trace-normalized eigenvalues, pooled over draws, as fractions."""
        counts, edges = np.histogram(self.normalized_eigenvalues.ravel(), bins=bins, range=(0.0, 1.0))
        return counts / max(counts.sum(), 1), edges

    def summary(self) -> dict:
        return {
            "n_theta": self.n_theta,
            "n_x": self.n_x,
            "seed": self.seed,
            "skipped_zero_trace": self.skipped,
            "min_eigenvalue": float(self.eigenvalues.min()),
            "max_eigenvalue": float(self.eigenvalues.max()),
            "small_eigenvalue_ratio": self.small_ratio,
            "small_eigenvalue_fraction": self.small_fraction(),
            "avg_normalized_trace": float(np.trace(self.average_normalized)),
        }


def _fim_draw(args):
    seed_seq, n_x, spec = args
    rng = np.random.default_rng(seed_seq)
    theta = random_theta(rng, spec.n_param_slots)
    x = rng.standard_normal((n_x, spec.n_data_slots))
    return fim_at(theta, x, spec)


def fim_spectrum(n_theta: int = 100, n_x: int = 100, seed: int = 0, *, spec: qsim.CircuitSpec | None = None,
                 jobs: int = 1) -> FimReport:
    """Per-draw FIMs at uniform random parameters with Gaussian inputs ``x ~ N(0, 1)``."""
    if n_theta < 1 or n_x < 1:
        raise ValueError("n_theta and n_x must be positive")
    spec = build_qdi_circuit() if spec is None else spec
    seqs = np.random.SeedSequence(seed).spawn(n_theta)
    mats = np.array(_map(_fim_draw, [(s, n_x, spec) for s in seqs], jobs))
    eig = np.linalg.eigvalsh(mats)
    traces = np.trace(mats, axis1=1, axis2=2)
    ok = traces > 0
    if not ok.all():
        log.warning("skipping %d zero-trace FIMs in the average", int((~ok).sum()))
    normed = mats[ok] / traces[ok, None, None]
    avg = normed.mean(axis=0) if len(normed) else np.zeros(mats.shape[1:])
    return FimReport(mats, eig, avg, n_theta, n_x, seed, skipped=int((~ok).sum()))


# Fourier spectrum ---------------------------------------------------------------

@dataclass
class FourierSpectrum:
    """Coefficients ``c(w)`` for ``w`` in ``{-1, 0, 1}^4`` (rows of ``FREQS``)."""

    coefficients: np.ndarray  # complex, (81,)
    output: int | str
    out_of_band: float = 0.0  # largest |c| at grid frequencies outside the lattice

    def components(self) -> np.ndarray:
        """81 real parts followed by the 80 imaginary parts with w != 0."""
        return component_vector(self.coefficients)

    def coefficient(self, omega) -> complex:
        idx = int(np.ravel_multi_index(tuple(np.asarray(omega) + 1), (3,) * N_QUBITS))
        return complex(self.coefficients[idx])

    def symmetry_error(self) -> float:
        return float(np.max(np.abs(self.coefficients[::-1] - self.coefficients.conj())))


def component_vector(coefficients: np.ndarray) -> np.ndarray:
    c = np.asarray(coefficients)
    imag = np.delete(c.imag, ZERO_FREQ, axis=-1)
    return np.concatenate([c.real, imag], axis=-1)


def component_labels() -> list[tuple[str, tuple[int, ...]]]:
    labels = [("re", tuple(int(v) for v in w)) for w in FREQS]
    labels += [("im", tuple(int(v) for v in w)) for i, w in enumerate(FREQS) if i != ZERO_FREQ]
    return labels


def _readout(values: np.ndarray, output) -> np.ndarray:
    if output == "sum":
        return values.sum(axis=-1)
    q = int(output)
    if not 0 <= q < N_QUBITS:
        raise ValueError(f"output qubit must be in 0..{N_QUBITS - 1} or 'sum', got {output!r}")
    return values[..., q]


def _grid(k: int) -> np.ndarray:
    axis = 2 * np.pi * np.arange(k) / k
    return np.stack(np.meshgrid(*([axis] * N_QUBITS), indexing="ij"), axis=-1).reshape(-1, N_QUBITS)


def _lattice_index(k: int) -> tuple[np.ndarray, ...]:
    return tuple((FREQS % k).T)


def fourier_batch(thetas: np.ndarray, output="sum", k: int = 5, chunk: int = 64):
    """Lattice coefficients ``(n, 81)`` and out-of-band maxima ``(n,)`` for a stack of parameter vectors."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if thetas.shape[1] != QdiLayout(1).n_params:
        raise ValueError("Fourier analysis needs the single-encoding layout (8 parameters)")
    if k < 3:
        raise ValueError("grid size must be at least 3")
    grid = _grid(k)
    idx = _lattice_index(k)
    inband = np.zeros((k,) * N_QUBITS, dtype=bool)
    inband[idx] = True
    coeffs, leak = [], []
    for s in range(0, len(thetas), chunk):
        th = thetas[s : s + chunk]
        vals = QdiKernel(th, 1).forward(np.broadcast_to(grid, (len(th),) + grid.shape))
        f = _readout(vals, output).reshape((len(th),) + (k,) * N_QUBITS)
        c = np.fft.fftn(f, axes=tuple(range(1, N_QUBITS + 1))) / k**N_QUBITS
        coeffs.append(c[(slice(None),) + idx])
        leak.append(np.abs(c[:, ~inband]).max(axis=1, initial=0.0))
    return np.concatenate(coeffs), np.concatenate(leak)


def fourier_spectrum(theta, output=0, k: int = 5) -> FourierSpectrum:
    """Fourier coefficients of ``<Y_output>`` (or the summed readout for ``output="sum"``).

    Sampled on the uniform grid ``x_j = 2 pi m / k``; ``k = 5`` suffices
    because every feature is encoded once, so frequencies lie in ``{-1, 0, 1}``.
    """
    _readout(np.zeros(N_QUBITS), output)
    c, leak = fourier_batch(np.asarray(theta, dtype=float)[None], output, k)
    return FourierSpectrum(c[0], output, float(leak[0]))


@dataclass
class AccessibilityReport:
    mean_abs: np.ndarray  # (161,)
    threshold: float
    n_samples: int
    seed: int
    output: int | str
    max_symmetry_error: float = 0.0
    mean_coefficients: np.ndarray = field(default_factory=lambda: np.zeros(len(FREQS), complex))

    @property
    def accessible(self) -> int:
        return int(np.sum(self.mean_abs > self.threshold))

    @property
    def total(self) -> int:
        return N_COMPONENTS

    def count_at(self, threshold: float) -> int:
        return int(np.sum(self.mean_abs > threshold))

    def summary(self) -> dict:
        return {
            "accessible": self.accessible,
            "total": self.total,
            "fraction": self.accessible / self.total,
            "threshold": self.threshold,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "output": self.output,
            "max_symmetry_error": self.max_symmetry_error,
        }


def _fourier_chunk(args):
    seqs, output = args
    th = np.array([random_theta(np.random.default_rng(s), 2 * N_QUBITS) for s in seqs])
    c, _ = fourier_batch(th, output)
    return c


def accessibility(n_samples: int = 1000, threshold: float = ACCESS_THRESHOLD, seed: int = 0, output="sum",
                  *, jobs: int = 1) -> AccessibilityReport:
    """Mean absolute value of every real Fourier component over random parameters."""
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    seqs = np.random.SeedSequence(seed).spawn(n_samples)
    chunks = [(seqs[i : i + 50], output) for i in range(0, n_samples, 50)]
    c = np.concatenate(_map(_fourier_chunk, chunks, jobs))
    sym = float(np.max(np.abs(c[:, ::-1] - c.conj())))
    return AccessibilityReport(np.abs(component_vector(c)).mean(axis=0), threshold, n_samples, seed, output,
                               sym, c.mean(axis=0))


def accessibility_count(n_samples: int = 1000, threshold: float = ACCESS_THRESHOLD, seed: int = 0,
                        output="sum", *, jobs: int = 1) -> tuple[int, int]:
    rep = accessibility(n_samples, threshold, seed, output, jobs=jobs)
    return rep.accessible, rep.total


# essentiality and equivalence -------------------------------------------------------

@dataclass
class EssentialityReport:
    max_abs_grad: np.ndarray
    threshold: float = ESSENTIAL_THRESHOLD
    n_samples: int = 0
    seed: int = 0

    @property
    def essential(self) -> np.ndarray:
        return self.max_abs_grad > self.threshold

    @property
    def n_essential(self) -> int:
        return int(self.essential.sum())

    def summary(self) -> dict:
        return {
            "essential": self.n_essential,
            "total": len(self.max_abs_grad),
            "threshold": self.threshold,
            "n_samples": self.n_samples,
            "seed": self.seed,
        }


def essential_parameters(n_samples: int = 1000, seed: int = 0, spec: qsim.CircuitSpec | None = None,
                         threshold: float = ESSENTIAL_THRESHOLD) -> EssentialityReport:
    """Largest ``|d<Y_k>/d theta_i|`` over random ``(theta, x)`` and measured qubits ``k``."""
    spec = build_qdi_circuit() if spec is None else spec
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-np.pi, np.pi, (n_samples, spec.n_param_slots))
    x = rng.uniform(-np.pi, np.pi, (n_samples, spec.n_data_slots))
    jac = qsim.circuit_jacobian(spec, theta, x)  # (n, measured, params)
    return EssentialityReport(np.abs(jac).max(axis=(0, 1)), threshold, n_samples, seed)


def padded_qdi_circuit() -> qsim.CircuitSpec:
    """QDI circuit plus an RX on a fifth, unmeasured and uncoupled qubit."""
    base = build_qdi_circuit()
    extra = qsim.GateOp("RX", N_QUBITS, param=base.n_param_slots)
    return qsim.CircuitSpec(
        n_qubits=N_QUBITS + 1,
        gates=base.gates + (extra,),
        n_param_slots=base.n_param_slots + 1,
        n_data_slots=base.n_data_slots,
        measured=base.measured,
    )


ParamMap = Callable[[np.ndarray], np.ndarray] | Sequence[tuple[int, float, float]] | None


def apply_param_map(param_map: ParamMap, theta: np.ndarray) -> np.ndarray:
    """``None`` is the identity; a sequence of ``(source, sign, offset)`` builds
    candidate parameter ``j`` as ``sign * theta[source] + offset``."""
    if param_map is None:
        return theta
    if callable(param_map):
        return np.asarray(param_map(theta), dtype=float)
    return np.array([sign * theta[src] + off for src, sign, off in param_map], dtype=float)


def verify_reduction(original: qsim.CircuitSpec, candidate: qsim.CircuitSpec, param_map: ParamMap = None,
                     n_trials: int = 20, seed: int = 0, tol: float = 1e-9) -> bool:
    """True iff the two circuits have equal unitaries up to global phase on every random trial."""
    if original.n_qubits != candidate.n_qubits:
        raise qsim.CircuitError(f"qubit counts differ: {original.n_qubits} vs {candidate.n_qubits}")
    if original.n_data_slots != candidate.n_data_slots:
        raise qsim.CircuitError("data slot counts differ")
    for rng in _rngs(seed, n_trials):
        theta = random_theta(rng, original.n_param_slots)
        x = rng.uniform(-np.pi, np.pi, original.n_data_slots)
        mapped = apply_param_map(param_map, theta)
        if mapped.shape != (candidate.n_param_slots,):
            raise qsim.CircuitError(f"param_map produced {mapped.shape}, candidate needs {candidate.n_param_slots}")
        u = qsim.unitary_of(original, theta, x)
        v = qsim.unitary_of(candidate, mapped, x)
        if not qsim.equivalent_up_to_phase(u, v, tol):
            return False
    return True


# report writers -----------------------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str))


def write_fisher(report: FimReport, out_dir, bins: int = 20) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    normed = report.normalized_eigenvalues
    with open(out / "fisher_eigenvalues.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["draw", "index", "eigenvalue", "normalized"])
        for d in range(report.n_theta):
            for i in range(report.eigenvalues.shape[1]):
                w.writerow([d, i, repr(float(report.eigenvalues[d, i])), repr(float(normed[d, i]))])
    with open(out / "fisher_avg_matrix.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        n = report.average_normalized.shape[0]
        w.writerow([""] + [f"theta{j}" for j in range(n)])
        for i in range(n):
            w.writerow([f"theta{i}"] + [repr(float(v)) for v in report.average_normalized[i]])
    frac, edges = report.histogram(bins)
    with open(out / "fisher_histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lo", "hi", "fraction"])
        for lo, hi, f in zip(edges[:-1], edges[1:], frac):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(f))])
    summary = report.summary()
    _write_json(out / "fisher_summary.json", summary)
    return summary


def write_fourier(report: AccessibilityReport, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mean_re_im = component_vector(report.mean_coefficients)
    with open(out / "fourier_coefficients.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["part", "w0", "w1", "w2", "w3", "mean_value", "mean_abs", "accessible"])
        for (part, omega), v, m in zip(component_labels(), mean_re_im, report.mean_abs):
            w.writerow([part, *omega, repr(float(v)), repr(float(m)), int(m > report.threshold)])
    summary = report.summary()
    _write_json(out / "fourier_summary.json", summary)
    return summary


def write_essentiality(report: EssentialityReport, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "essentiality.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "max_abs_grad", "essential"])
        for i, (g, e) in enumerate(zip(report.max_abs_grad, report.essential)):
            w.writerow([i, repr(float(g)), int(e)])
    summary = report.summary()
    _write_json(out / "essentiality_summary.json", summary)
    return summary
