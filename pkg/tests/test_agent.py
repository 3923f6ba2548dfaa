import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from p6 import agent as ag
from p6 import fuzz
from p6 import program as pg
from p6.p4q import load_queries
from p6.pipeline import default_queries_path
from conftest import deployed, read_fixture, rules_for


def dense_forward(m, x):
    # plain full-width MLP as the oracle for the prefix-only first layer
    h = x
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        h = h @ w + b
        if i < len(m.weights) - 1:
            h = np.maximum(h, 0)
    return h


def small_model(seed=0, sizes=(12, 6, 5, 4)):
    return ag.MlpModel.init(list(sizes), np.random.default_rng(seed))


def test_init_shapes_and_bounds():
    m = ag.MlpModel.init([1500, 64, 64, 76], np.random.default_rng(0))
    assert m.sizes == [1500, 64, 64, 76]
    assert np.abs(m.weights[0]).max() <= 1 / np.sqrt(1500)
    assert np.abs(m.weights[2]).max() <= 1 / np.sqrt(64)
    assert m.copy().equals(m)


def test_forward_rejects_wrong_width():
    with pytest.raises(ag.DimensionMismatch):
        ag.forward(small_model(), np.zeros(11))


@given(st.integers(0, 12), st.integers(0, 2**31))
def test_prefix_forward_matches_dense(k, seed):
    rng = np.random.default_rng(seed)
    m = small_model(seed % 7)
    x = np.zeros((3, 12))
    x[:, :k] = rng.random((3, k))
    np.testing.assert_allclose(ag.forward(m, x), dense_forward(m, x), rtol=1e-12, atol=1e-12)


def test_pack_states_matches_encode_state():
    packets = [b"\x01\x02", b"\xff" * 5, b""]
    x = ag.pack_states(packets, 1500)
    assert x.shape == (3, 5)
    for row, p in zip(x, packets):
        np.testing.assert_array_equal(np.pad(row, (0, 1495)), fuzz.encode_state(p))


@pytest.mark.parametrize("loss", ["mse", "cross_entropy"])
def test_gradients_match_finite_differences(loss):
    rng = np.random.default_rng(5)
    m = small_model(1)
    x = rng.random((6, 12))
    acts = rng.integers(0, 4, size=6)
    y = rng.random(6)
    _, gw, gb = ag.loss_and_grads(m, x, acts, y, loss)
    h = 1e-6
    for params, grads in ((m.weights, gw), (m.biases, gb)):
        for p, g in zip(params, grads):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = ag.loss_and_grads(m, x, acts, y, loss)[0]
                p[idx] = old - h
                down = ag.loss_and_grads(m, x, acts, y, loss)[0]
                p[idx] = old
                assert g[idx] == pytest.approx((up - down) / (2 * h), rel=1e-5, abs=1e-8)


def test_mse_value():
    m = small_model()
    x = np.random.default_rng(0).random((4, 12))
    q = dense_forward(m, x)
    acts = np.array([0, 1, 2, 3])
    y = np.array([0.5, -1.0, 2.0, 0.0])
    value, _, _ = ag.loss_and_grads(m, x, acts, y, "mse")
    assert value == pytest.approx(np.mean((q[np.arange(4), acts] - y) ** 2))
    with pytest.raises(ValueError):
        ag.loss_and_grads(m, x, acts, y, "hinge")


def test_epsilon_schedule():
    hp = ag.Hyperparams(num_episodes=10, max_ep_len=10)
    assert hp.epsilon(0) == 1.0
    assert hp.epsilon(25) == pytest.approx(1.0 - 25 * 0.95 / 50)
    assert hp.epsilon(50) == pytest.approx(0.05)
    assert hp.epsilon(10_000) == 0.05
    eps = [hp.epsilon(t) for t in range(100)]
    assert all(a >= b for a, b in zip(eps, eps[1:]))


def tr(r, i=0):
    return ag.Transition(i, 0, r, i, bool(r))


def test_replay_dense_ranks():
    mem = ag.ReplayMemory(10, 0.5)
    for r in (0, 1, 0, -1, 0.5):
        mem.add(tr(r))
    assert list(mem.ranks()) == [2, 0, 2, 0, 1]
    w = np.array([0.25, 1, 0.25, 1, 0.5])
    np.testing.assert_allclose(mem.probabilities(), w / w.sum())


def test_replay_capacity_is_fifo():
    mem = ag.ReplayMemory(3, 0.9)
    for i in range(5):
        mem.add(tr(0, i))
    assert [t.s for t in mem.entries] == [2, 3, 4]


def test_replay_sampling_frequencies():
    mem = ag.ReplayMemory(100, 0.5)
    for i in range(10):
        mem.add(tr(1 if i == 3 else 0, i))
    rng = np.random.default_rng(0)
    counts = np.bincount([t.s for t in mem.sample(20_000, rng)], minlength=10)
    expected = mem.probabilities() * 20_000
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 27.9  # 99.9% quantile, 9 degrees of freedom


def test_replay_factor_validation():
    with pytest.raises(ValueError):
        ag.ReplayMemory(4, 0.0)


def test_ddqn_target():
    online, target = small_model(1), small_model(2)
    s2 = np.random.default_rng(0).random(12)
    assert ag.ddqn_target(ag.Transition(None, 0, 1.0, s2, True), online, target, 0.9) == 1.0
    a_star = int(np.argmax(dense_forward(online, s2)))
    want = 0.5 + 0.9 * dense_forward(target, s2)[a_star]
    assert ag.ddqn_target(ag.Transition(None, 0, 0.5, s2, False), online, target, 0.9) == pytest.approx(want)


def test_select_action_rules():
    m = small_model()
    m.weights[-1][:] = 0
    m.biases[-1][:] = [0.0, 2.0, 1.0, 2.0]
    s = np.zeros(12)
    assert ag.select_action(m, s, 0.0, None) == 1  # tie between 1 and 3 goes low
    rng = np.random.default_rng(0)
    counts = np.bincount([ag.select_action(m, s, 1.0, rng) for _ in range(10_000)], minlength=4)
    chi2 = ((counts - 2500) ** 2 / 2500).sum()
    assert chi2 < 16.3  # 99.9% quantile, 3 degrees of freedom


def textbook_adam(params, grads_seq, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    params = [p.copy() for p in params]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    for t, grads in enumerate(grads_seq, start=1):
        for i, g in enumerate(grads):
            m[i] = b1 * m[i] + (1 - b1) * g
            v[i] = b2 * v[i] + (1 - b2) * g * g
            mh = m[i] / (1 - b1 ** t)
            vh = v[i] / (1 - b2 ** t)
            params[i] -= lr * mh / (np.sqrt(vh) + eps)
    return params


def test_adam_matches_textbook():
    rng = np.random.default_rng(3)
    params = [rng.random((6, 3)), rng.random(3)]
    grads_seq = []
    for t in range(20):
        g = [rng.normal(size=(6, 3)), rng.normal(size=3)]
        g[0][4 if t < 10 else 5:] = 0  # trailing rows untouched for a while
        grads_seq.append(g)
    want = textbook_adam(params, grads_seq)
    got = [p.copy() for p in params]
    opt = ag.Adam()
    for g in grads_seq:
        opt.update(got, g)
    for a, b in zip(got, want):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-13)


def q5_env(seed=0):
    sa = pg.analyze_program(pg.parse_program(read_fixture("l3switch_buggy.p4l")))
    qs = load_queries(default_queries_path())
    d = fuzz.build_dictionary(sa, rules_for("l3switch"), qs)
    return fuzz.FuzzEnv(deployed("l3switch"), qs[4], 0, d, rng=np.random.default_rng(seed), record=False)


def test_zero_episodes_returns_initial_networks():
    env = q5_env()
    out = ag.train_agent(env, ag.Hyperparams(num_episodes=0), seed=4)
    init = ag.MlpModel.init([1500, 64, 64, env.num_actions], np.random.default_rng(4))
    assert out.online.equals(init) and out.target.equals(init) and out.steps == 0


def test_training_is_deterministic_and_learns():
    hp = ag.Hyperparams(num_episodes=40)
    a = ag.train_agent(q5_env(1), hp, seed=2)
    b = ag.train_agent(q5_env(1), hp, seed=2)
    assert a.online.equals(b.online) and a.episode_rewards == b.episode_rewards
    assert not a.online.equals(ag.MlpModel.init([1500, 64, 64, 76], np.random.default_rng(2)))
    assert sum(a.episode_rewards) > 0


def test_model_file_roundtrip(tmp_path):
    m = small_model(9)
    path = tmp_path / "m.bin"
    ag.save_model(m, path)
    assert ag.load_model(path).equals(m)
    path.write_bytes(b"nonsense\n")
    with pytest.raises(ValueError):
        ag.load_model(path)
    ag.save_model(m, path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        ag.load_model(path)
