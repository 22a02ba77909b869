import math

import numpy as np
import pytest

from hydroseq import model as mdl
from hydroseq.errors import BoundsError, CheckpointFormatError, DomainError, ShapeError, TrainingError
from hydroseq.numerics import Rng, finite_diff_grad


def scalar_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def scalar_selu(x):
    return mdl.SELU_LAMBDA * (x if x > 0 else mdl.SELU_ALPHA * (math.exp(x) - 1.0))


def scalar_cell(x, h, c, p):
    """Plain-loop LSTM step, one unit at a time."""
    H = p.hidden
    gates = {}
    for g in mdl.GATES:
        W, U, b = p.gate(g)
        z = [b[k] + sum(W[k, j] * x[j] for j in range(len(x))) + sum(U[k, j] * h[j] for j in range(H))
             for k in range(H)]
        act = scalar_selu if g == "c" else scalar_sigmoid
        gates[g] = [act(v) for v in z]
    c_new = [c[k] * gates["f"][k] + gates["i"][k] * gates["c"][k] for k in range(H)]
    h_new = [gates["o"][k] * scalar_selu(c_new[k]) for k in range(H)]
    return np.array(h_new), np.array(c_new)


def scalar_forward(x, p):
    """Eval-mode network on one gauge's window (l_seq x n_in), by loops."""
    h = [0.0] * p.lstm.hidden
    c = [0.0] * p.lstm.hidden
    for row in x:
        e = [scalar_selu(p.encoder.bias[k] + sum(p.encoder.weight[k, j] * row[j] for j in range(len(row))))
             for k in range(p.encoder.n_out)]
        h, c = scalar_cell(e, h, c, p.lstm)
    return np.array([
        scalar_selu(p.decoder.bias[k] + sum(p.decoder.weight[k, j] * h[j] for j in range(len(h))))
        for k in range(p.n_targets)
    ])


def random_params(n_in, hidden, n_t, seed, enc=None, dropout=0.2):
    p = mdl.init_params(n_in, n_t, enc or hidden, hidden, dropout, Rng(seed))
    r = np.random.default_rng(seed)
    for a in p.arrays().values():
        a += 0.1 * r.normal(size=a.shape)
    return p


def test_selu_values():
    assert mdl.selu(0.0) == 0.0
    assert mdl.selu(1.0) == pytest.approx(1.0507009873554805)
    assert mdl.selu(-1e3) == pytest.approx(-mdl.SELU_LAMBDA * mdl.SELU_ALPHA)
    assert mdl.selu(-1e3) == pytest.approx(-1.758099, abs=1e-6)


def test_cell_zero_params():
    p = mdl.LstmParams(np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
    c0 = np.array([0.4, -1.2])
    h, c, _ = mdl.lstm_cell_forward(np.ones(3), np.zeros(2), c0, p)
    np.testing.assert_allclose(c, 0.5 * c0, atol=1e-15)
    np.testing.assert_allclose(h, 0.5 * mdl.selu(0.5 * c0), atol=1e-15)


def test_cell_forget_saturation():
    b = np.zeros(8)
    b[:2] = 20.0
    p = mdl.LstmParams(np.zeros((8, 3)), np.zeros((8, 2)), b)
    c0 = np.array([0.7, -0.3])
    _, c, _ = mdl.lstm_cell_forward(np.ones(3), np.zeros(2), c0, p)
    np.testing.assert_allclose(c, c0, atol=1e-8)


def test_cell_matches_scalar_oracle():
    r = np.random.default_rng(1)
    p = mdl.LstmParams(r.normal(size=(16, 3)), r.normal(size=(16, 4)), r.normal(size=16))
    x, h0, c0 = r.normal(size=3), r.normal(size=4), r.normal(size=4)
    h, c, _ = mdl.lstm_cell_forward(x, h0, c0, p)
    h_ref, c_ref = scalar_cell(x, h0, c0, p)
    np.testing.assert_allclose(h, h_ref, atol=1e-12)
    np.testing.assert_allclose(c, c_ref, atol=1e-12)


def test_cell_state_preserved_when_gates_pinned():
    # f -> 1 and i -> 0 exactly is unreachable with finite biases, so pin the
    # gates through the internal step with a hand-built pre-activation
    H, G = 3, 2
    c0 = np.array([[0.3, -2.0, 5.0], [1.0, 0.0, -0.5]])
    c = c0.copy()
    h = np.zeros((G, H))
    for _ in range(50):
        z = np.zeros((G, 4 * H))
        z[:, :H] = np.inf
        z[:, H:2 * H] = -np.inf
        h, c, _ = mdl._cell_from_preact(z, h, c, H)
    np.testing.assert_array_equal(c, c0)


def test_forward_matches_scalar_oracle():
    p = random_params(2, 3, 2, seed=4)
    x = np.random.default_rng(9).normal(size=(5, 3, 2))
    pred, _ = mdl.forward(x, p, "eval")
    for g in range(3):
        np.testing.assert_allclose(pred[g], scalar_forward(x[:, g], p), atol=1e-12)


def test_forward_eval_deterministic_and_dropout_off():
    p = random_params(3, 4, 2, seed=2)
    x = np.random.default_rng(0).normal(size=(6, 5, 3))
    a, _ = mdl.forward(x, p, "eval")
    b, _ = mdl.forward(x, p, "eval")
    assert np.array_equal(a, b)
    p0 = random_params(3, 4, 2, seed=2, dropout=0.0)
    t, _ = mdl.forward(x, p0, "train", Rng(1))
    e, _ = mdl.forward(x, p0, "eval")
    assert np.array_equal(t, e)


def test_forward_shape_error():
    p = random_params(3, 4, 2, seed=2)
    with pytest.raises(ShapeError):
        mdl.forward(np.ones((5, 2, 4)), p)


def test_inverted_dropout_expectation():
    # fixture kept in the near-linear regime: weak input weights into the gates
    # and a decoder bias that holds SELU on its identity branch
    p = random_params(2, 3, 2, seed=8, dropout=0.2)
    p.lstm.W *= 0.05
    p.decoder.bias[:] = 2.0
    x = np.random.default_rng(1).normal(size=(4, 1, 2)) * 0.1
    x = np.repeat(x, 10_000, axis=1)
    train, _ = mdl.forward(x, p, "train", Rng(3))
    ev, _ = mdl.forward(x[:, :1], p, "eval")
    np.testing.assert_allclose(train.mean(axis=0), ev[0], rtol=0.02)


def _loss_fn(p, x, y, mask_seed):
    def f(flat_arrays):
        pred, _ = mdl.forward(x, p, "train", Rng(mask_seed))
        return mdl.mse_loss(pred, y)[0]
    return f


def max_rel_grad_error(seed, n_in=4, hidden=8, n_t=2, steps=5, gauges=3):
    p = random_params(n_in, hidden, n_t, seed, dropout=0.2)
    r = np.random.default_rng(seed + 100)
    x = r.normal(size=(steps, gauges, n_in))
    y = r.normal(size=(gauges, n_t))
    pred, cache = mdl.forward(x, p, "train", Rng(seed))
    _, d = mdl.mse_loss(pred, y)
    grads = mdl.backward(cache, d)
    worst = 0.0
    for name, arr in p.arrays().items():
        def f(v, arr=arr):
            saved = arr.copy()
            arr[...] = v
            out, _ = mdl.forward(x, p, "train", Rng(seed))  # same dropout masks
            arr[...] = saved
            return mdl.mse_loss(out, y)[0]
        num = finite_diff_grad(f, arr.copy(), 1e-5)
        denom = np.maximum(np.abs(num) + np.abs(grads[name]), 1e-6)
        worst = max(worst, float(np.max(np.abs(num - grads[name]) / denom)))
    return worst


@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_finite_differences(seed):
    assert max_rel_grad_error(seed) < 1e-4


def test_backward_linearity():
    p = random_params(3, 4, 2, seed=5)
    x = np.random.default_rng(5).normal(size=(4, 2, 3))
    _, cache = mdl.forward(x, p, "train", Rng(0))
    zero = mdl.backward(cache, np.zeros((2, 2)))
    assert all(np.all(g == 0) for g in zero.values())
    d = np.random.default_rng(6).normal(size=(2, 2))
    g1 = mdl.backward(cache, d)
    g2 = mdl.backward(cache, 2 * d)
    for k in g1:
        np.testing.assert_allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=1e-15)


def _scalar_params(value):
    arrays = {
        "encoder.weight": np.full((1, 1), value), "encoder.bias": np.zeros(1),
        "lstm.W": np.zeros((4, 1)), "lstm.U": np.zeros((4, 1)), "lstm.b": np.zeros(4),
        "decoder.weight": np.zeros((1, 1)), "decoder.bias": np.zeros(1),
    }
    return mdl.ModelParams.from_arrays(arrays, 0.0)


def test_adam_first_step_closed_form():
    p = mdl.init_params(2, 1, 3, 3, 0.0, Rng(0))
    before = {k: v.copy() for k, v in p.arrays().items()}
    state = mdl.AdamState.zeros_like(p, lr=0.001)
    mdl.adam_step(p, {k: np.ones_like(v) for k, v in before.items()}, state)
    for k, v in p.arrays().items():
        np.testing.assert_allclose(before[k] - v, 0.001 / (1 + 1e-8), rtol=1e-12)
    assert state.t == 1


def test_adam_zero_gradient_identity():
    p = mdl.init_params(2, 1, 3, 3, 0.0, Rng(0))
    before = {k: v.copy() for k, v in p.arrays().items()}
    state = mdl.AdamState.zeros_like(p)
    for _ in range(3):
        mdl.adam_step(p, {k: np.zeros_like(v) for k, v in before.items()}, state)
    assert state.t == 3
    for k, v in p.arrays().items():
        assert np.array_equal(v, before[k])


def test_adam_scripted_scalar_sequence():
    p = _scalar_params(0.5)
    state = mdl.AdamState.zeros_like(p, lr=0.01)
    w, m, v = 0.5, 0.0, 0.0
    for t, g in enumerate([0.3, -1.2, 0.7], start=1):
        grads = {k: np.zeros_like(a) for k, a in p.arrays().items()}
        grads["encoder.weight"][0, 0] = g
        mdl.adam_step(p, grads, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w -= 0.01 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert state.m["encoder.weight"][0, 0] == pytest.approx(m, abs=1e-12)
        assert state.v["encoder.weight"][0, 0] == pytest.approx(v, abs=1e-12)
        assert p.encoder.weight[0, 0] == pytest.approx(w, abs=1e-12)


def test_adam_non_finite_gradient():
    p = _scalar_params(0.5)
    grads = {k: np.zeros_like(a) for k, a in p.arrays().items()}
    grads["lstm.U"][0, 0] = np.nan
    with pytest.raises(TrainingError, match="lstm.U"):
        mdl.adam_step(p, grads, mdl.AdamState.zeros_like(p))


def test_batch_formulas():
    assert mdl.batches_per_epoch(7031, 21) == 7011
    assert mdl.batches_per_epoch(21, 21) == 1
    assert mdl.batches_per_epoch(100, 1) == 100
    with pytest.raises(DomainError):
        mdl.batches_per_epoch(20, 21)
    assert mdl.batch_size(21, 10, 5) == 1050
    assert mdl.batch_size(1, 1, 1) == 1
    assert mdl.batch_size(21, 671, 34) == 479_094


def _fifty_day_data():
    r = np.random.default_rng(12)
    return mdl.WindowData(r.normal(size=(50, 4, 3)), r.normal(size=(50, 4, 2)))


def materialize_all(data, l_seq):
    """Naive oracle: copy out every window up front."""
    D = data.inputs.shape[0]
    return [(data.inputs[i:i + l_seq].copy(), data.targets[i + l_seq].copy())
            for i in range(D - l_seq)]


def test_batch_at_window_arithmetic():
    data = _fifty_day_data()
    plan = data.plan(21)
    b0 = mdl.batch_at(plan, data, 0)
    np.testing.assert_array_equal(b0.inputs, data.inputs[0:21])
    np.testing.assert_array_equal(b0.targets, data.targets[21])
    last = mdl.batch_at(plan, data, plan.n_batches - 1)
    assert plan.n_batches - 1 + 21 == 49  # target is the final day
    np.testing.assert_array_equal(last.targets, data.targets[49])
    with pytest.raises(BoundsError):
        mdl.batch_at(plan, data, plan.n_batches)


def test_batcher_equals_materialized_oracle():
    data = _fifty_day_data()
    oracle = materialize_all(data, 21)
    batcher = mdl.WindowBatcher(data, 21)
    assert len(batcher) == len(oracle)
    # zip/enumerate cache their result tuple and would pin the previous batch
    it = iter(batcher)
    for x, y in oracle:
        batch = next(it)
        assert np.array_equal(batch.inputs, x) and np.array_equal(batch.targets, y)
        assert np.shares_memory(batch.inputs, data.inputs)
        del batch
    assert batcher.peak_live <= 1


def test_predict_windows_matches_per_batch_forward():
    data = _fifty_day_data()
    p = random_params(3, 4, 2, seed=3)
    all_pred = mdl.predict_windows(p, data, 7, chunk=5)
    plan = data.plan(7)
    for i in range(plan.n_batches):
        b = mdl.batch_at(plan, data, i)
        np.testing.assert_allclose(all_pred[i], mdl.forward(b.inputs, p, "eval")[0], atol=1e-13)


def _linear_task():
    r = np.random.default_rng(0)
    x = r.random((120, 6, 2))
    y = 0.3 + 0.4 * np.roll(x[..., :1], 1, axis=0)
    return mdl.WindowData(x[:, :4], y[:, :4]), mdl.WindowData(x[:, 4:], y[:, 4:])


def test_train_null_run():
    tr, va = _linear_task()
    cfg = mdl.TrainConfig(successful_epochs=0, l_seq=5, encoder_size=4, hidden_size=4)
    init = mdl.init_params(2, 1, 4, 4, 0.2, Rng(0).child(1))
    p, h = mdl.train(cfg, tr, va, rng=Rng(0))
    assert len(h) == 0
    for k, v in p.arrays().items():
        assert np.array_equal(v, init.arrays()[k])


def test_train_reduces_loss_and_is_deterministic():
    tr, va = _linear_task()
    cfg = mdl.TrainConfig(successful_epochs=5, l_seq=5, encoder_size=6, hidden_size=6, seed=42)
    p1, h1 = mdl.train(cfg, tr, va, rng=Rng(42))
    p2, h2 = mdl.train(cfg, tr, va, rng=Rng(42))
    assert h1.epochs == h2.epochs
    assert h1.epochs[-1].train_rmse < h1.epochs[0].train_rmse
    assert h1.n_successful == 5 and h1.n_successful <= len(h1)
    for k in p1.arrays():
        assert np.array_equal(p1.arrays()[k], p2.arrays()[k])


def test_train_max_epochs_guard():
    tr, va = _linear_task()
    cfg = mdl.TrainConfig(successful_epochs=50, max_epochs=2, l_seq=5, encoder_size=3, hidden_size=3)
    _, h = mdl.train(cfg, tr, va)
    assert len(h) == 2


def test_train_divergence_reports_epoch():
    tr, va = _linear_task()
    bad = mdl.WindowData(tr.inputs.copy(), tr.targets.copy())
    bad.targets[10, 0, 0] = np.inf
    cfg = mdl.TrainConfig(successful_epochs=1, l_seq=5, encoder_size=3, hidden_size=3)
    with pytest.raises(TrainingError, match="epoch 1"):
        mdl.train(cfg, bad, va)


def test_checkpoint_round_trip(tmp_path):
    p = random_params(3, 4, 2, seed=1)
    path = tmp_path / "m.ckpt"
    mdl.save_checkpoint(p, path, meta={"seed": 1})
    q, header = mdl.read_checkpoint(path)
    assert header["meta"] == {"seed": 1} and q.dropout_rate == p.dropout_rate
    for k, v in p.arrays().items():
        assert np.array_equal(q.arrays()[k], v)
        assert q.arrays()[k].tobytes() == v.tobytes()


def test_checkpoint_gate_views(tmp_path):
    p = random_params(3, 4, 2, seed=1)
    W_f, U_f, b_f = p.lstm.gate("f")
    assert W_f.shape == (4, 4) and U_f.shape == (4, 4) and b_f.shape == (4,)
    assert np.shares_memory(W_f, p.lstm.W)


def test_checkpoint_corruption(tmp_path):
    p = random_params(3, 4, 2, seed=1)
    path = tmp_path / "m.ckpt"
    mdl.save_checkpoint(p, path)
    blob = path.read_bytes()
    (tmp_path / "t.ckpt").write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointFormatError) as exc:
        mdl.load_checkpoint(tmp_path / "t.ckpt")
    assert exc.value.offset is not None
    (tmp_path / "g.ckpt").write_bytes(b"garbage\n")
    with pytest.raises(CheckpointFormatError):
        mdl.load_checkpoint(tmp_path / "g.ckpt")
    flipped = bytearray(blob)
    flipped[-10] = ord("!")
    (tmp_path / "f.ckpt").write_bytes(bytes(flipped))
    with pytest.raises(CheckpointFormatError):
        mdl.load_checkpoint(tmp_path / "f.ckpt")
