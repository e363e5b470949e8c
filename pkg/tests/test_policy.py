import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uafrec import policy as pol
from uafrec.autodiff import Tensor, grad_check, ops, precision


def test_gumbel_noise_values():
    assert pol.gumbel_noise(0.5) == pytest.approx(-math.log(math.log(2)), abs=1e-12)
    assert pol.gumbel_noise(0.5) == pytest.approx(0.366513, abs=1e-6)
    assert pol.gumbel_noise(math.exp(-1)) == 0.0
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(pol.PolicyError):
            pol.gumbel_noise(bad)


def test_gumbel_noise_mean():
    g = pol.sample_gumbel(np.random.default_rng(0), 10**6)
    assert abs(g.mean() - 0.5772156649) < 0.01


def test_gumbel_hard_sample_examples():
    assert np.array_equal(pol.gumbel_hard_sample(np.log([0.9, 0.1]), [0, 0]), [1, 0])
    assert np.array_equal(pol.gumbel_hard_sample(np.log([0.1, 0.9]), [0, 0]), [0, 1])
    # exact tie breaks toward index 0
    assert np.array_equal(pol.gumbel_hard_sample(np.log([0.5, 0.5]), [0, 0]), [1, 0])


def test_gumbel_max_frequency():
    rng = np.random.default_rng(1)
    pi = np.array([0.3, 0.7])
    g = pol.sample_gumbel(rng, (10**5, 2))
    z = pol.gumbel_hard_sample(np.log(pi)[None], g)
    assert abs(z[:, 1].mean() - 0.7) < 0.01


def test_relaxation_limits():
    a = pol.gumbel_softmax_relax(np.log([0.5, 0.5]), [0.0, 0.0], 3.0).data
    assert np.allclose(a, [0.5, 0.5])
    a = pol.gumbel_softmax_relax(Tensor(np.log([0.9, 0.1]), dtype=np.float64), [0.0, 0.0], 1e4).data
    assert np.allclose(a, [0.5, 0.5], atol=1e-3)
    g = np.array([0.3, -0.2])
    lp = np.log([0.4, 0.6])
    a = pol.gumbel_softmax_relax(Tensor(lp, dtype=np.float64), g, 0.01).data
    assert a.max() > 0.999 and a.argmax() == np.argmax(lp + g)
    with pytest.raises(pol.PolicyError):
        pol.gumbel_softmax_relax(lp, g, 0.0)


def test_hard_gates_forward_is_one_hot_and_gradient_is_relaxed():
    rng = np.random.default_rng(2)
    with precision(np.float64):
        logits = Tensor(rng.standard_normal((3, 4, 2)), requires_grad=True)
        g = pol.sample_gumbel(rng, (3, 4, 2))
        gates = pol.hard_gates(logits, g, 2.0)
        assert set(np.unique(gates.data)) <= {0.0, 1.0}
        w = rng.standard_normal((3, 4))
        ops.sum(ops.mul(gates, w)).backward()
        straight = logits.grad.copy()
        logits.grad = None
        soft = pol.gumbel_softmax_relax(ops.log_softmax(logits), g, 2.0)
        ops.sum(ops.mul(soft[..., 1], w)).backward()
        assert np.allclose(straight, logits.grad)


def test_relaxed_path_finite_differences():
    rng = np.random.default_rng(3)
    with precision(np.float64):
        for _ in range(20):
            x = Tensor(rng.standard_normal((2, 3, 2)), requires_grad=True)
            g = pol.sample_gumbel(rng, (2, 3, 2))
            w = rng.standard_normal((2, 3))
            f = lambda: ops.sum(ops.mul(pol.gumbel_softmax_relax(ops.log_softmax(x), g, 0.7)[..., 1], w))
            assert grad_check(f, x) < 1e-4


def test_soft_gate_examples():
    h = Tensor(np.zeros((1, 4)))
    assert np.allclose(pol.soft_gate(h, Tensor(np.zeros((4, 3))), Tensor(np.zeros(3))).data, 0.5)
    vals = [pol.soft_gate(Tensor([[v]], dtype=np.float64), Tensor([[1.0]], dtype=np.float64),
                          Tensor([0.0], dtype=np.float64)).data.item() for v in (0, 1, 5, 20, 40)]
    assert all(a < b for a, b in zip(vals, vals[1:4])) and vals[-1] == pytest.approx(1.0)


def test_reward_values():
    cfg = pol.RewardConfig(gamma=1.0, num_blocks=8)
    assert pol.reward(np.ones(8), True, cfg) == 0.0
    assert pol.reward([1, 1, 0, 0, 0, 0, 0, 0], True, cfg) == 0.9375
    assert pol.reward(np.zeros(8), False, cfg) == -1.0
    assert pol.reward(np.zeros(8), True, cfg) == 1.0
    with pytest.raises(pol.PolicyError):
        pol.reward(np.zeros(7), True, cfg)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=8, max_size=8), st.integers(0, 7))
def test_reward_prefers_fewer_tuned_blocks(acts, j):
    cfg = pol.RewardConfig(num_blocks=8)
    a = np.array(acts, dtype=float)
    if a[j] == 0:
        more = a.copy()
        more[j] = 1
        assert pol.reward(a, True, cfg) > pol.reward(more, True, cfg)
    assert pol.reward(a, True, cfg) >= 0.0 > pol.reward(a, False, cfg) or cfg.gamma == 0


def test_scst_examples():
    cfg = pol.RewardConfig(num_blocks=2)
    logits = Tensor(np.zeros((1, 2, 2)), requires_grad=True)
    a = np.array([[0.0, 1.0]])
    loss, _, _ = pol.scst_loss(logits, a, a, np.array([True]), np.array([True]), cfg)
    assert float(loss.data) == 0.0
    lp = Tensor(np.log([0.5, 0.5]), dtype=np.float64)
    loss = pol.scst_from_rewards(lp, 0.9375, 0.0)
    assert float(loss.data) == pytest.approx(-2 * math.log(0.5) * 0.9375, abs=1e-9)
    assert float(loss.data) == pytest.approx(1.299651, abs=1e-6)


def test_scst_gradient_finite_differences():
    rng = np.random.default_rng(4)
    cfg = pol.RewardConfig(num_blocks=3)
    with precision(np.float64):
        for _ in range(20):
            x = Tensor(rng.standard_normal((4, 3, 2)), requires_grad=True)
            s = rng.integers(0, 2, size=(4, 3)).astype(float)
            gr = rng.integers(0, 2, size=(4, 3)).astype(float)
            cs, cg = rng.random(4) < 0.5, rng.random(4) < 0.5
            assert grad_check(lambda: pol.scst_loss(x, s, gr, cs, cg, cfg)[0], x) < 1e-4


def test_rl_action_sampler():
    rng = np.random.default_rng(5)
    s, g = pol.rl_actions_from_probs(np.tile([1.0, 0.0], (10, 3, 1)), rng)
    assert not s.any() and not g.any()
    s, _ = pol.rl_actions_from_probs(np.tile([0.5, 0.5], (10**5, 1)), rng)
    assert abs(s.mean() - 0.5) < 0.01


def test_random_policy():
    a = pol.random_policy(7, 8).values
    assert np.array_equal(a, pol.random_policy(7, 8).values)
    assert len(pol.random_policy(7, 0).values) == 0
    rp = pol.RandomPolicy(3, 4)
    users = np.arange(1, 25001)
    gates = rp.gates(users)
    assert abs(gates.mean() - 0.5) < 0.01
    assert np.array_equal(rp.gates(users[:10]), pol.RandomPolicy(3, 4).gates(users[:10]))


def test_policy_network_shapes_and_symmetry():
    net = pol.PolicyNetwork.init(30, 8, 4, mode="categorical", seed=0)
    src = np.random.default_rng(0).integers(1, 30, size=(5, 12))
    out = net(src)
    assert out.shape == (5, 4, 2)
    src[1] = src[0]
    assert np.array_equal(out.data[0], net(src).data[1])
    net.head_weight.data[...] = 0
    probs = ops.softmax(net(src), axis=-1).data
    assert np.allclose(probs, 0.5)
    assert pol.PolicyNetwork.init(30, 8, 4, mode="sigmoid").__call__(src).shape == (5, 4)


def test_decision_validation_and_csv(tmp_path):
    with pytest.raises(pol.PolicyError):
        pol.PolicyDecision(np.array([0.0, 0.5]), pol.HARD)
    with pytest.raises(pol.PolicyError):
        pol.PolicyDecision(np.array([0.0, 0.5]), pol.SOFT)
    gates = np.array([[0.0, 1.0], [0.123456789, 1.0]])
    pol.write_decisions_csv(tmp_path / "d.csv", [3, 9], gates)
    users, back = pol.read_decisions_csv(tmp_path / "d.csv")
    assert users.tolist() == [3, 9] and back[1, 0] == 0.123457
