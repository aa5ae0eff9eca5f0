import numpy as np
import pytest

import oracles as O
from qrul import model as M
from qrul import nn
from qrul.qdi import QdiKernel


def tiny_hqrnn():
    return M.HqrnnConfig(window=4, n_features=2, hidden=(3, 2), dense=(3,))


def loss_fn(cfg, arrays, x, y):
    return float(nn.mse_loss(M.forward(cfg, M.arrays_to_params(arrays), x), y).data)


def check_gradients(cfg, seed, rng, n_check=6):
    params = M.init_params(cfg, seed)
    x = rng.normal(size=(3, cfg.window, cfg.n_features))
    y = rng.normal(size=3)
    nn.mse_loss(M.forward(cfg, params, x), y).backward()
    arrays = M.params_to_arrays(params)
    for name, p in params.items():
        flat = arrays[name].ravel()
        for i in rng.choice(flat.size, min(n_check, flat.size), replace=False):
            h = 1e-5
            plus = {k: v.copy() for k, v in arrays.items()}
            minus = {k: v.copy() for k, v in arrays.items()}
            plus[name].flat[i] += h
            minus[name].flat[i] -= h
            fd = (loss_fn(cfg, plus, x, y) - loss_fn(cfg, minus, x, y)) / (2 * h)
            g = p.grad.flat[i]
            if abs(fd) > 1e-4:
                assert g == pytest.approx(fd, rel=1e-4), (name, i)
            else:
                assert abs(g - fd) < 1e-8, (name, i)


def test_param_counts_of_baselines():
    # published counts for the classical baselines
    for name, n in (("RNN-32-16-8-16-32", 14609), ("RNN-20-16-4-8-16", 6793),
                    ("RNN-16-8-4-8-16", 4233), ("RNN-8-4-2-4-8", 1349)):
        assert M.param_count(M.RnnConfig.from_name(name)) == n


def test_head_param_count():
    assert M.head_param_count(30, 8, (16, 32)) == 4433


def test_param_count_matches_initialized_arrays():
    for cfg in (M.HqrnnConfig(), M.RnnConfig(), M.HqrnnConfig(n_reps=2, out_projection="shared")):
        params = M.init_params(cfg, 0)
        assert M.param_count(cfg) == sum(p.data.size for p in params.values())
    assert M.param_count(M.HqrnnConfig()) == 7585


def test_rnn_name_round_trip():
    cfg = M.RnnConfig.from_name("RNN-20-16-4-8-16")
    assert cfg.hidden == (20, 16, 4) and cfg.dense == (8, 16)
    assert cfg.name == "RNN-20-16-4-8-16"
    assert M.config_from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        M.RnnConfig.from_name("LSTM-3")


def test_init_is_seeded():
    a = M.params_to_arrays(M.init_params(M.HqrnnConfig(), 3))
    b = M.params_to_arrays(M.init_params(M.HqrnnConfig(), 3))
    c = M.params_to_arrays(M.init_params(M.HqrnnConfig(), 4))
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert any(a[k].tobytes() != c[k].tobytes() for k in a)


@pytest.mark.parametrize("make", [lambda: M.HqrnnConfig(window=3, n_features=2, hidden=(3,), dense=()),
                                  lambda: M.RnnConfig(window=3, n_features=2, hidden=(3,), dense=())])
def test_zero_params_cell_closed_form(make, rng):
    cfg = make()
    params = M.zero_params(cfg)
    c0 = rng.normal(size=(2, 3))
    x = rng.normal(size=(2, 2))
    if cfg.kind == "hqrnn":
        h1, c1 = M.qlstm_cell_step(params, "l0.", x, np.zeros((2, 3)), c0, QdiKernel(np.zeros((4, 8))))
    else:
        h1, c1 = M.lstm_cell_step(params, "l0.", x, np.zeros((2, 3)), c0)
    np.testing.assert_allclose(c1.data, 0.5 * c0, atol=1e-14)
    np.testing.assert_allclose(h1.data, 0.5 * np.tanh(0.5 * c0), atol=1e-14)
    if cfg.kind == "hqrnn":
        h0, c0_ = M.qlstm_cell_step(params, "l0.", x, np.zeros((2, 3)), np.zeros((2, 3)), QdiKernel(np.zeros((4, 8))))
        assert not h0.data.any() and not c0_.data.any()


def test_zero_params_output_is_final_bias(rng):
    cfg = tiny_hqrnn()
    params = M.zero_params(cfg)
    assert M.hqrnn_forward(cfg, params, rng.normal(size=(4, 2))) == 0.0
    params["head1.bias"] = nn.Tensor([2.5], requires_grad=True)
    assert M.hqrnn_forward(cfg, params, rng.normal(size=(4, 2))) == 2.5


def test_tiny_hqrnn_matches_hand_rolled_oracle(rng):
    cfg = tiny_hqrnn()
    arrays = M.params_to_arrays(M.init_params(cfg, 9))
    for _ in range(3):
        w = rng.normal(size=(4, 2))
        assert M.hqrnn_forward(cfg, M.arrays_to_params(arrays), w) == pytest.approx(
            O.hqrnn_oracle(arrays, cfg.hidden, cfg.dense, w), abs=1e-12)


def test_lstm_matches_textbook_single_step(rng):
    cfg = M.RnnConfig(window=1, n_features=1, hidden=(1,), dense=())
    arrays = M.params_to_arrays(M.init_params(cfg, 2))
    x, h, c = np.array([0.7]), np.zeros(1), np.array([0.4])
    h1, c1 = M.lstm_cell_step(M.arrays_to_params(arrays), "l0.", x[None], h[None], c[None])
    ref_h, ref_c = O.lstm_step(x, h, c, arrays["l0.w"], arrays["l0.b"] + arrays["l0.b_rec"])
    np.testing.assert_allclose(h1.data[0], ref_h, atol=1e-14)
    np.testing.assert_allclose(c1.data[0], ref_c, atol=1e-14)


def test_rnn_forward_matches_textbook_unroll(rng):
    cfg = M.RnnConfig(window=5, n_features=3, hidden=(4,), dense=(2,))
    arrays = M.params_to_arrays(M.init_params(cfg, 1))
    w = rng.normal(size=(5, 3))
    h, c, hs = np.zeros(4), np.zeros(4), []
    for x in w:
        h, c = O.lstm_step(x, h, c, arrays["l0.w"], arrays["l0.b"] + arrays["l0.b_rec"])
        hs.append(h)
    z = np.maximum(arrays["head0.weight"] @ np.concatenate(hs) + arrays["head0.bias"], 0)
    ref = arrays["head1.weight"] @ z + arrays["head1.bias"]
    assert M.rnn_baseline_forward(cfg, M.arrays_to_params(arrays), w) == pytest.approx(ref[0], abs=1e-12)


def test_tiny_hqrnn_gradients(rng):
    check_gradients(tiny_hqrnn(), 5, rng)


def test_shared_projection_gradients(rng):
    cfg = M.HqrnnConfig(window=3, n_features=2, hidden=(2,), dense=(2,), n_reps=2,
                        in_projection="shared", out_projection="shared")
    check_gradients(cfg, 6, rng)


def test_tiny_rnn_gradients(rng):
    check_gradients(M.RnnConfig(window=4, n_features=2, hidden=(3, 2), dense=(3,)), 7, rng)


def test_forward_shapes_and_errors(rng):
    cfg = tiny_hqrnn()
    params = M.init_params(cfg, 0)
    assert M.forward(cfg, params, rng.normal(size=(5, 4, 2))).shape == (5,)
    assert isinstance(M.hqrnn_forward(cfg, params, rng.normal(size=(4, 2))), float)
    with pytest.raises(ValueError):
        M.forward(cfg, params, rng.normal(size=(5, 3, 2)))
    np.testing.assert_allclose(M.predict(cfg, params, rng.normal(size=(7, 4, 2)), batch_size=3).shape, (7,))


def test_predict_matches_forward(rng):
    cfg = tiny_hqrnn()
    params = M.init_params(cfg, 0)
    x = rng.normal(size=(7, 4, 2))
    np.testing.assert_allclose(M.predict(cfg, params, x, batch_size=3), M.forward(cfg, params, x).data, atol=1e-14)


def test_config_validation():
    with pytest.raises(ValueError):
        M.HqrnnConfig(hidden=())
    with pytest.raises(ValueError):
        M.HqrnnConfig(in_projection="bogus")
    with pytest.raises(ValueError):
        M.config_from_dict({"kind": "transformer"})
