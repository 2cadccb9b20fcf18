"""Tests for the policy network: forward oracle, gradient checks, SGD."""

import numpy as np
import pytest

from mergelab import net


def naive_forward(params, x):
    """Straight-line recomputation of the forward pass, kept deliberately
    independent of net.forward (plain softmax, no log-sum-exp)."""
    a = np.asarray(x, dtype=float)
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        a = np.tanh(w @ a + b)
    logits = params.weights[-1] @ a + params.biases[-1]
    e = np.exp(logits)
    return e / e.sum()


def fd_logprob_grad(params, x, action, step=1e-5):
    """Central finite differences of log pi(action|x) over the flat params."""
    flat = net.flatten(params)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        for sign, slot in ((+1, 0), (-1, 1)):
            bumped = flat.copy()
            bumped[i] += sign * step
            probs, _ = net.forward(net.unflatten(params, bumped), x)
            if slot == 0:
                hi = np.log(probs[action])
            else:
                lo = np.log(probs[action])
        grad[i] = (hi - lo) / (2 * step)
    return grad


def random_net(rng, input_dim=5, output_dim=3, hidden=4):
    return net.init_params(rng, input_dim, output_dim, hidden=hidden)


def test_zero_params_give_uniform_distribution():
    params = net._zero_params((5, 4, 4, 4, 3))
    probs, _ = net.forward(params, np.ones(5))
    assert np.allclose(probs, 1.0 / 3.0)


def test_distribution_sums_to_one():
    rng = np.random.default_rng(0)
    for _ in range(50):
        params = random_net(rng)
        probs, _ = net.forward(params, rng.normal(size=5))
        assert abs(probs.sum() - 1.0) < 1e-12
        assert (probs > 0).all() and (probs < 1).all()


def test_forward_matches_naive_recomputation():
    rng = np.random.default_rng(1)
    for _ in range(30):
        params = random_net(rng)
        x = rng.normal(size=5)
        probs, _ = net.forward(params, x)
        assert np.allclose(probs, naive_forward(params, x), atol=1e-12)


def test_forward_is_deterministic_and_pure():
    rng = np.random.default_rng(2)
    params = random_net(rng)
    x = rng.normal(size=5)
    before = net.flatten(params).copy()
    p1, _ = net.forward(params, x)
    p2, _ = net.forward(params, x)
    assert np.array_equal(p1, p2)
    assert np.array_equal(net.flatten(params), before)


def test_tape_replay_reproduces_output():
    rng = np.random.default_rng(3)
    params = random_net(rng)
    probs, tape = net.forward(params, rng.normal(size=5))
    assert np.array_equal(tape.replay(), probs)


def test_forward_rejects_dimension_mismatch():
    rng = np.random.default_rng(4)
    params = random_net(rng)
    with pytest.raises(net.DimensionError):
        net.forward(params, np.zeros(6))


def test_gradcheck_100_random_triples():
    rng = np.random.default_rng(5)
    for _ in range(100):
        params = random_net(rng, input_dim=3, output_dim=3, hidden=3)
        x = rng.normal(size=3)
        action = int(rng.integers(3))
        _, tape = net.forward(params, x)
        exact = net.logprob_grad(params, tape, action)
        approx = fd_logprob_grad(params, x, action)
        denom = max(np.linalg.norm(approx), 1e-8)
        assert np.linalg.norm(exact - approx) / denom < 1e-4


def test_single_action_head_has_zero_gradient():
    rng = np.random.default_rng(6)
    params = net.init_params(rng, 4, 1, hidden=3)
    probs, tape = net.forward(params, rng.normal(size=4))
    assert probs[0] == 1.0
    assert np.array_equal(net.logprob_grad(params, tape, 0), np.zeros(params.n_params))


def test_logprob_grad_rejects_bad_action():
    rng = np.random.default_rng(7)
    params = random_net(rng)
    _, tape = net.forward(params, rng.normal(size=5))
    with pytest.raises(net.DimensionError):
        net.logprob_grad(params, tape, 3)


def test_score_function_expectation_is_zero_100_nets():
    # sum_a pi(a|s) grad log pi(a|s) = 0 for any normalized differentiable head
    rng = np.random.default_rng(8)
    for _ in range(100):
        params = random_net(rng, input_dim=4, output_dim=3, hidden=4)
        probs, tape = net.forward(params, rng.normal(size=4))
        total = np.zeros(params.n_params)
        for a in range(3):
            total += probs[a] * net.logprob_grad(params, tape, a)
        assert np.abs(total).max() < 1e-10


def test_flatten_order_is_layer_major_weights_first():
    w = [np.arange(6, dtype=float).reshape(2, 3), np.arange(4, dtype=float).reshape(2, 2),
         np.arange(4, dtype=float).reshape(2, 2) + 10, np.arange(2, dtype=float).reshape(1, 2)]
    b = [np.array([100.0, 101.0]), np.array([102.0, 103.0]), np.array([104.0, 105.0]), np.array([106.0])]
    params = net.NetParams(tuple(w), tuple(b))
    flat = net.flatten(params)
    expected = np.concatenate([
        [0, 1, 2, 3, 4, 5], [100, 101],
        [0, 1, 2, 3], [102, 103],
        [10, 11, 12, 13], [104, 105],
        [0, 1], [106],
    ]).astype(float)
    assert np.array_equal(flat, expected)
    round_trip = net.unflatten(params, flat)
    for a, c in zip(round_trip.weights, params.weights):
        assert np.array_equal(a, c)


def test_sgd_zero_gradient_and_zero_rate_leave_params_unchanged():
    rng = np.random.default_rng(9)
    params = random_net(rng)
    flat = net.flatten(params)
    assert np.array_equal(net.flatten(net.sgd_step(params, np.zeros_like(flat), 0.1)), flat)
    assert np.array_equal(net.flatten(net.sgd_step(params, rng.normal(size=flat.size), 0.0)), flat)


def test_sgd_ascent_increases_linear_objective():
    rng = np.random.default_rng(10)
    params = random_net(rng)
    c = rng.normal(size=params.n_params)
    f = lambda p: float(net.flatten(p) @ c)
    stepped = net.sgd_step(params, c, 0.05, direction="ascent")
    assert f(stepped) > f(params)
    stepped_down = net.sgd_step(params, c, 0.05, direction="descent")
    assert f(stepped_down) < f(params)


def test_sgd_rejects_non_finite_gradient():
    rng = np.random.default_rng(11)
    params = random_net(rng)
    bad = np.zeros(params.n_params)
    bad[0] = np.nan
    with pytest.raises(ValueError):
        net.sgd_step(params, bad, 0.1)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    sets = {"root": random_net(rng), "speed": net.init_params(rng, 7, 3, hidden=8)}
    path = tmp_path / "params.ckpt"
    net.save_checkpoint(path, sets)
    loaded = net.load_checkpoint(path)
    assert set(loaded) == {"root", "speed"}
    for name in sets:
        # float32 storage: match at single precision
        assert np.allclose(net.flatten(loaded[name]), net.flatten(sets[name]), atol=1e-6)
        assert loaded[name].dims == sets[name].dims


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(ValueError):
        net.load_checkpoint(path)


def test_checkpoint_bytes_are_deterministic(tmp_path):
    rng = np.random.default_rng(13)
    sets = {"a": random_net(rng)}
    p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
    net.save_checkpoint(p1, sets)
    net.save_checkpoint(p2, sets)
    assert p1.read_bytes() == p2.read_bytes()
