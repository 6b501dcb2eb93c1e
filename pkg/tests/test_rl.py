import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vne_lab.agents import LowerPolicy, PolicyConfig
from vne_lab.autodiff import Parameter, Tensor
from vne_lab.config import EnvConfig, desk_env
from vne_lab.rl import (
    FreezeError,
    PpoConfig,
    RewardConfig,
    Trajectory,
    advantage_average_reward,
    advantage_discounted,
    lower_step_reward,
    ppo_loss,
    train_lower,
    train_upper,
    upper_reward,
)

SMALL = PolicyConfig(embed_dim=8, hidden_dim=8, gnn_layers=2, pe_dim=4, seed=0)


def test_upper_reward_examples():
    assert upper_reward(True, True, 35.0, 40.0) == pytest.approx(30.625, abs=1e-12)
    assert upper_reward(True, False, 0.0, 0.0, w1=0.1) == -0.1
    assert upper_reward(False, False, 35.0, 40.0) == 0.0


def test_lower_reward_examples():
    assert lower_step_reward(False, False, 0, 0, 0, 4) == -0.25
    delta = lower_step_reward(True, False, 10.0, 10.0, 0.5, 2, w2=0.01)
    assert delta == pytest.approx(0.5025, abs=1e-12)
    final = lower_step_reward(True, True, 10.0, 10.0, 0.5, 2, rev=35.0, cost=40.0, w2=0.01)
    assert final == pytest.approx(delta + 0.875, abs=1e-12)


def test_basic_reward_drops_shaping_terms():
    assert lower_step_reward(False, False, 0, 0, 0, 4, basic=True) == 0.0
    assert lower_step_reward(True, False, 10, 10, 0.5, 2, basic=True) == 0.0
    assert lower_step_reward(True, True, 10, 10, 0.5, 2, rev=35, cost=40, basic=True) == 0.875


def loop_discounted(r, v, done, gamma, last):
    adv = []
    for t in range(len(r)):
        nxt = 0.0 if done[t] else (v[t + 1] if t + 1 < len(r) else last)
        adv.append(r[t] + gamma * nxt - v[t])
    return adv


def loop_average(r, v, done, last):
    rho = sum(r) / len(r)
    adv = []
    for t in range(len(r)):
        nxt = 0.0 if done[t] else (v[t + 1] if t + 1 < len(r) else last)
        adv.append(r[t] - rho + nxt - v[t])
    return adv


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_advantages_match_loop_oracles(n, seed, gamma):
    g = np.random.default_rng(seed)
    r, v = g.normal(size=n).tolist(), g.normal(size=n).tolist()
    done = (g.random(n) < 0.2).tolist()
    last = float(g.normal())
    adv, target = advantage_discounted(r, v, done, gamma, last)
    assert np.allclose(adv, loop_discounted(r, v, done, gamma, last), rtol=0, atol=1e-12)
    assert np.allclose(target - np.array(v), adv, rtol=0, atol=1e-12)
    adv2, _ = advantage_average_reward(r, v, done, last)
    assert np.allclose(adv2, loop_average(r, v, done, last), rtol=0, atol=1e-12)


def test_advantage_special_cases():
    adv, _ = advantage_discounted([1.0, 2.0, 3.0], [5.0] * 3, [False, False, True], gamma=1.0)
    # constant V and gamma 1 leave only the reward, except the terminal step (no bootstrap)
    assert adv.tolist() == [1.0, 2.0, -2.0]
    adv, _ = advantage_average_reward([0.7] * 5, [2.0] * 5)
    assert np.allclose(adv[:-1], 0.0, atol=1e-15) and adv[-1] == pytest.approx(-2.0)
    g = np.random.default_rng(0)
    r, v = g.normal(size=50), g.normal(size=50)
    adv, _ = advantage_average_reward(r, v)
    # (r - rho) sums to zero and V telescopes to -V(s_0)
    assert adv.sum() == pytest.approx(-v[0], abs=1e-10)


CFG = PpoConfig()


def _loss(new, old, adv, values=None, targets=None, ent=None):
    new = Parameter(np.asarray(new, dtype=float))
    values = Parameter(np.zeros(len(adv)) if values is None else np.asarray(values, dtype=float))
    targets = np.zeros(len(adv)) if targets is None else targets
    ent = Tensor(np.zeros(len(adv))) if ent is None else ent
    loss, stats = ppo_loss(new, old, adv, values, targets, ent, CFG)
    loss.backward()
    return loss, stats, new, values


def test_ppo_ratio_one_gives_negative_mean_advantage():
    adv = np.array([0.5, -1.0, 2.0])
    _, stats, _, _ = _loss(np.log([0.2, 0.3, 0.4]), np.log([0.2, 0.3, 0.4]), adv)
    assert stats["policy_loss"] == pytest.approx(-adv.mean(), abs=1e-12)


def test_ppo_clip_arithmetic():
    _, stats, new, _ = _loss([np.log(1.5)], [0.0], np.array([1.0]))
    assert stats["policy_loss"] == pytest.approx(-1.2, abs=1e-12)
    # clipping binds for a positive advantage above 1 + eps: no policy gradient
    assert new.grad == pytest.approx([0.0], abs=1e-15)
    _, stats, new, _ = _loss([np.log(0.5)], [0.0], np.array([-1.0]))
    assert stats["policy_loss"] == pytest.approx(0.8, abs=1e-12)
    assert new.grad == pytest.approx([0.0], abs=1e-15)
    # inside the band the gradient is -A * r / n
    _, _, new, _ = _loss([np.log(1.1)], [0.0], np.array([2.0]))
    assert new.grad == pytest.approx([-2.2], abs=1e-12)


def test_ppo_zero_advantage_only_value_and_entropy():
    ent = Parameter(np.array([0.3, 0.5]))
    loss, stats, new, values = _loss([0.1, -0.2], [0.0, 0.0], np.zeros(2), values=[1.0, 2.0],
                                     targets=np.array([0.0, 0.0]), ent=ent)
    assert stats["policy_loss"] == 0.0
    assert np.all(new.grad == 0.0)
    assert values.grad == pytest.approx(0.5 * 2 * np.array([1.0, 2.0]) / 2)
    assert ent.grad == pytest.approx([-0.01 / 2] * 2)
    assert loss.item() == pytest.approx(0.5 * 2.5 - 0.01 * 0.4)


def test_ppo_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(clip=1.0)
    with pytest.raises(ValueError):
        PpoConfig(batch_size=0)


def test_trajectory_rejects_infinite_logp():
    t = Trajectory()
    t.append(None, 0, -1.0, 0.0, 0.0, False)
    with pytest.raises(ValueError):
        t.append(None, 1, -np.inf, 0.0, 0.0, False)
    assert len(t) == 1
    t.clear()
    assert len(t) == 0


def tiny_env(**kw):
    base = dict(n_nodes=10, beta=0.6, node_range=(3, 3), n_vnrs=30, mean_lifetime=300.0, topology_seed=0)
    base.update(kw)
    return EnvConfig(**base)


def test_training_is_seeded():
    ppo = PpoConfig(batch_size=32)
    a, rows_a = train_lower(tiny_env(), 3, SMALL, ppo, seed=5)
    b, rows_b = train_lower(tiny_env(), 3, SMALL, ppo, seed=5)
    assert a.param_hash() == b.param_hash()
    assert [r["reward"] for r in rows_a] == [r["reward"] for r in rows_b]
    assert rows_a[-1]["updates"] > 0


def test_lower_learning_smoke(tmp_path):
    """10-node substrate, 3-node VNRs: later episodes out-earn the first 20."""
    ppo = PpoConfig(batch_size=64)
    curve = tmp_path / "curve.csv"
    _, rows = train_lower(tiny_env(), 200, SMALL, ppo, seed=0, curve_path=curve)
    rewards = np.array([r["reward"] for r in rows])
    assert rewards[-20:].mean() > rewards[:20].mean()
    assert len(curve.read_text().splitlines()) == 201


def test_upper_training_leaves_lower_frozen():
    lower = LowerPolicy(SMALL)
    before = lower.param_hash()
    upper, rows = train_upper(lower, tiny_env(n_vnrs=20), 3, SMALL, PpoConfig(batch_size=16), seed=1)
    assert lower.param_hash() == before
    assert rows[-1]["updates"] >= 1


def test_freeze_violation_is_detected(monkeypatch):
    lower = LowerPolicy(SMALL)
    from vne_lab import rl

    original = rl.rollout

    def tampering(policy, *a, **k):
        policy.parameters()[0].data += 1.0
        return original(policy, *a, **k)

    monkeypatch.setattr(rl, "rollout", tampering)
    with pytest.raises(FreezeError):
        train_upper(lower, tiny_env(n_vnrs=5), 1, SMALL, PpoConfig(batch_size=16), seed=0)


def test_reward_config_defaults():
    r = RewardConfig()
    assert (r.w1, r.w2, r.basic_lower) == (0.1, 0.01, False)
    assert desk_env().n_nodes == 30
