"""QLSTM / HQRNN and the classical stacked-LSTM baseline.

Parameters live in flat ``dict[str, Tensor]`` maps so the optimizer and the
checkpoint writer can treat every model the same way. Gate order everywhere
is (forget, input, update, output).

QLSTM cell, per gate ``g``::

    v   = [x_t, h]
    a_g = out_g( QDI(theta_g, in_g(v)) )
    f, i, o = sigmoid(a_f, a_i, a_o);  u = tanh(a_u)
    c' = f * c + i * u;  h' = o * tanh(c')

The regression head reads the concatenation of all ``W`` hidden vectors of
the last recurrent layer (time-major), then Dense -> ReLU -> Dense -> ReLU ->
Dense(1).
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from . import nn
from .nn import Tensor
from .qdi import N_QUBITS, QdiKernel, y_expectations

GATES = ("forget", "input", "update", "output")

# Table I reference rows: (mean RMSE, best RMSE, mean MAE, best MAE, n_params)
PAPER_TABLE = {
    "HQRNN": (15.46, 14.78, 12.25, 11.51, 6793),
    "RNN-32-16-8-16-32": (16.71, 15.68, 13.18, 12.19, 14609),
    "RNN-20-16-4-8-16": (16.37, 15.73, 12.89, 12.51, 6793),
    "RNN-16-8-4-8-16": (16.56, 15.52, 13.03, 12.36, 4233),
    "RNN-8-4-2-4-8": (29.72, 15.07, 24.52, 12.20, 1349),
}


@dataclass
class HqrnnConfig:
    window: int = 30
    n_features: int = 14
    hidden: tuple[int, ...] = (32, 16, 8)
    dense: tuple[int, ...] = (16, 32)
    n_reps: int = 1
    # "per_gate" gives every gate its own adapter; "shared" uses one for all four
    in_projection: str = "per_gate"
    out_projection: str = "per_gate"
    projection_bias: bool = True
    kind: str = field(default="hqrnn", init=False)

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)
        self.dense = tuple(int(d) for d in self.dense)
        _check_dims(self.window, self.n_features, self.hidden, self.dense)
        if self.n_reps < 1:
            raise ValueError("n_reps must be >= 1")
        for name in ("in_projection", "out_projection"):
            if getattr(self, name) not in ("per_gate", "shared"):
                raise ValueError(f"{name} must be 'per_gate' or 'shared'")

    @property
    def n_theta(self) -> int:
        return N_QUBITS * (1 + self.n_reps)

    @property
    def name(self) -> str:
        return "HQRNN"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["dense"] = list(self.dense)
        return d


@dataclass
class RnnConfig:
    window: int = 30
    n_features: int = 14
    hidden: tuple[int, ...] = (20, 16, 4)
    dense: tuple[int, ...] = (8, 16)
    # separate input and recurrent bias vectors, as in common LSTM libraries
    recurrent_bias: bool = True
    kind: str = field(default="rnn", init=False)

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)
        self.dense = tuple(int(d) for d in self.dense)
        _check_dims(self.window, self.n_features, self.hidden, self.dense)

    @classmethod
    def from_name(cls, name: str, **kwargs) -> "RnnConfig":
        """Parse ``RNN-a-b-c-d-e``: LSTM dims a, b, c and dense c*W -> d -> e -> 1."""
        m = re.fullmatch(r"RNN((?:-\d+)+)", name.strip(), flags=re.IGNORECASE)
        if not m:
            raise ValueError(f"cannot parse model name {name!r}")
        dims = [int(v) for v in m.group(1).strip("-").split("-")]
        if len(dims) < 2:
            raise ValueError(f"{name!r} needs at least one LSTM and one dense dim")
        n_lstm = kwargs.pop("n_lstm", 3)
        return cls(hidden=tuple(dims[:n_lstm]), dense=tuple(dims[n_lstm:]), **kwargs)

    @property
    def name(self) -> str:
        return "RNN-" + "-".join(str(d) for d in self.hidden + self.dense)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["dense"] = list(self.dense)
        return d


def _check_dims(window, n_features, hidden, dense) -> None:
    if window < 1 or n_features < 1:
        raise ValueError("window and n_features must be positive")
    if not hidden or any(h < 1 for h in hidden) or any(d < 1 for d in dense):
        raise ValueError("all layer dims must be positive")


def config_from_dict(d: Mapping):
    d = dict(d)
    kind = d.pop("kind", "hqrnn")
    if kind == "hqrnn":
        return HqrnnConfig(**d)
    if kind == "rnn":
        return RnnConfig(**d)
    raise ValueError(f"unknown model kind {kind!r}")


# parameter construction ----------------------------------------------------

def _uniform(rng, bound, shape, name) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True, name=name)


def _head_params(rng, cfg, params: dict) -> None:
    dims = [cfg.hidden[-1] * cfg.window, *cfg.dense, 1]
    for k, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
        p = nn.init_dense(rng, n_in, n_out, name=f"head{k}")
        params[f"head{k}.weight"] = p.weight
        params[f"head{k}.bias"] = p.bias


def init_params(cfg, seed: int | np.random.Generator) -> dict[str, Tensor]:
    """Seeded initialization.

    Dense, projection and LSTM weights are uniform in +-1/sqrt(fan_in);
    QDI angles are uniform in [-pi, pi].
    """
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    n_in = cfg.n_features
    for layer, h in enumerate(cfg.hidden):
        pre = f"l{layer}."
        v = n_in + h
        if cfg.kind == "hqrnn":
            g_in = 4 if cfg.in_projection == "per_gate" else 1
            g_out = 4 if cfg.out_projection == "per_gate" else 1
            params[pre + "in_w"] = _uniform(rng, 1 / np.sqrt(v), (g_in, N_QUBITS, v), pre + "in_w")
            if cfg.projection_bias:
                params[pre + "in_b"] = _uniform(rng, 1 / np.sqrt(v), (g_in, N_QUBITS), pre + "in_b")
            params[pre + "theta"] = _uniform(rng, np.pi, (4, cfg.n_theta), pre + "theta")
            params[pre + "out_w"] = _uniform(rng, 1 / np.sqrt(N_QUBITS), (g_out, h, N_QUBITS), pre + "out_w")
            if cfg.projection_bias:
                params[pre + "out_b"] = _uniform(rng, 1 / np.sqrt(N_QUBITS), (g_out, h), pre + "out_b")
        else:
            bound = 1 / np.sqrt(v)
            params[pre + "w"] = _uniform(rng, bound, (4 * h, v), pre + "w")
            params[pre + "b"] = _uniform(rng, bound, (4 * h,), pre + "b")
            if cfg.recurrent_bias:
                params[pre + "b_rec"] = _uniform(rng, bound, (4 * h,), pre + "b_rec")
        n_in = h
    _head_params(rng, cfg, params)
    return params


def zero_params(cfg) -> dict[str, Tensor]:
    return {k: Tensor(np.zeros_like(v.data), requires_grad=True, name=k) for k, v in init_params(cfg, 0).items()}


def param_count(cfg) -> int:
    """Trainable scalar count under this module's parameterization."""
    total = 0
    n_in = cfg.n_features
    for h in cfg.hidden:
        v = n_in + h
        if cfg.kind == "hqrnn":
            g_in = 4 if cfg.in_projection == "per_gate" else 1
            g_out = 4 if cfg.out_projection == "per_gate" else 1
            b = 1 if cfg.projection_bias else 0
            total += g_in * N_QUBITS * (v + b) + 4 * cfg.n_theta + g_out * h * (N_QUBITS + b)
        else:
            total += 4 * h * (v + 1 + (1 if cfg.recurrent_bias else 0))
        n_in = h
    dims = [cfg.hidden[-1] * cfg.window, *cfg.dense, 1]
    total += sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    return total


def head_param_count(window: int, last_hidden: int, dense: tuple[int, ...]) -> int:
    dims = [last_hidden * window, *dense, 1]
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


# forward passes --------------------------------------------------------------

def qdi_layer(features: Tensor, theta: Tensor, kernel: QdiKernel) -> Tensor:
    """Differentiable QDI evaluation for a gate stack: ``(G, B, 4) -> (G, B, 4)``."""
    cache = kernel.states(features.data)
    out = y_expectations(cache[2])

    def back(g):
        _, gp, gx = kernel.vjp(features.data, g, cache)
        return gx, gp

    return nn.custom(out, (features, theta), back)


def _gate_stack(t: Tensor, groups: int) -> Tensor:
    """Broadcast a shared adapter (leading dim 1) to the four gates."""
    return t if groups == 4 else nn.stack([t[0]] * 4, axis=0)


def _lstm_update(a: Tensor, c: Tensor):
    """``a`` stacks the four gate pre-activations on axis 0."""
    f = nn.sigmoid(a[0])
    i = nn.sigmoid(a[1])
    u = nn.tanh(a[2])
    o = nn.sigmoid(a[3])
    c_new = f * c + i * u
    h_new = o * nn.tanh(c_new)
    return h_new, c_new


def qlstm_cell_step(params: Mapping[str, Tensor], prefix: str, x_t, h, c, kernel: QdiKernel):
    """One QLSTM step on a batch: ``x_t (B, I)``, ``h, c (B, H)``."""
    x_t, h, c = nn.as_tensor(x_t), nn.as_tensor(h), nn.as_tensor(c)
    v = nn.concat([x_t, h], axis=-1)
    in_w = params[prefix + "in_w"]
    a = nn.einsum("bi,gqi->gbq", v, in_w)
    if prefix + "in_b" in params:
        a = a + params[prefix + "in_b"].reshape(in_w.shape[0], 1, N_QUBITS)
    a = _gate_stack(a, in_w.shape[0])
    q = qdi_layer(a, params[prefix + "theta"], kernel)
    out_w = params[prefix + "out_w"]
    if out_w.shape[0] == 4:
        z = nn.einsum("gbq,ghq->gbh", q, out_w)
    else:
        z = nn.einsum("gbq,hq->gbh", q, out_w[0])
    if prefix + "out_b" in params:
        ob = params[prefix + "out_b"]
        z = z + ob.reshape(ob.shape[0], 1, ob.shape[1])
    return _lstm_update(z, c)


def lstm_cell_step(params: Mapping[str, Tensor], prefix: str, x_t, h, c):
    """Classical LSTM step with gate pre-activations ``W [x, h] + b``."""
    x_t, h, c = nn.as_tensor(x_t), nn.as_tensor(h), nn.as_tensor(c)
    v = nn.concat([x_t, h], axis=-1)
    w = params[prefix + "w"]
    z = nn.matmul(v, nn.transpose(w)) + params[prefix + "b"]
    if prefix + "b_rec" in params:
        z = z + params[prefix + "b_rec"]
    hdim = w.shape[0] // 4
    z = z.reshape(z.shape[0], 4, hdim)
    a = nn.stack([z[:, k] for k in range(4)], axis=0)
    return _lstm_update(a, c)


def _check_window(cfg, windows: np.ndarray) -> np.ndarray:
    windows = np.asarray(windows, dtype=float)
    if windows.ndim == 2:
        windows = windows[None]
    if windows.ndim != 3 or windows.shape[1:] != (cfg.window, cfg.n_features):
        raise ValueError(f"expected windows of shape (B, {cfg.window}, {cfg.n_features}), got {windows.shape}")
    return windows


def recurrent_states(cfg, params: Mapping[str, Tensor], windows) -> list[list[Tensor]]:
    """Hidden-state sequences of every recurrent layer: ``states[layer][t]`` is ``(B, H)``."""
    windows = _check_window(cfg, windows)
    b = windows.shape[0]
    seq: list = [Tensor(windows[:, t, :]) for t in range(cfg.window)]
    all_states = []
    for layer, hdim in enumerate(cfg.hidden):
        pre = f"l{layer}."
        h = Tensor(np.zeros((b, hdim)))
        c = Tensor(np.zeros((b, hdim)))
        kernel = QdiKernel(params[pre + "theta"].data, cfg.n_reps) if cfg.kind == "hqrnn" else None
        out = []
        for x_t in seq:
            if kernel is not None:
                h, c = qlstm_cell_step(params, pre, x_t, h, c, kernel)
            else:
                h, c = lstm_cell_step(params, pre, x_t, h, c)
            out.append(h)
        all_states.append(out)
        seq = out
    return all_states


def head_forward(cfg, params: Mapping[str, Tensor], last_states: list[Tensor]) -> Tensor:
    z = nn.stack(last_states, axis=1)
    z = z.reshape(z.shape[0], cfg.window * cfg.hidden[-1])
    n = len(cfg.dense) + 1
    for k in range(n):
        z = nn.dense_forward(nn.DenseParams(params[f"head{k}.weight"], params[f"head{k}.bias"]), z)
        if k < n - 1:
            z = nn.relu(z)
    return z.reshape(z.shape[0])


def forward(cfg, params: Mapping[str, Tensor], windows) -> Tensor:
    """Batch of RUL estimates, shape ``(B,)``, for windows ``(B, W, I)``."""
    states = recurrent_states(cfg, params, windows)
    return head_forward(cfg, params, states[-1])


def hqrnn_forward(cfg: HqrnnConfig, params, window) -> float:
    """Scalar RUL estimate for a single ``(W, I)`` window."""
    return float(forward(cfg, params, np.asarray(window)[None]).data[0])


def rnn_baseline_forward(cfg: RnnConfig, params, window) -> float:
    return float(forward(cfg, params, np.asarray(window)[None]).data[0])


def predict(cfg, params: Mapping[str, Tensor], windows, batch_size: int = 512) -> np.ndarray:
    windows = _check_window(cfg, windows)
    frozen = {k: Tensor(v.data) for k, v in params.items()}
    out = [forward(cfg, frozen, windows[s : s + batch_size]).data for s in range(0, len(windows), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def params_to_arrays(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data for k, v in params.items()}


def arrays_to_params(arrays: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(np.array(v, dtype=float), requires_grad=True, name=k) for k, v in arrays.items()}
