import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualrank.dataset import TrainingInstance
from dualrank.grpo import (
    FeatureConfig, PlackettLucePolicy, PolicyParams, TrainerConfig, clipped_surrogate, collect_rollouts,
    featurize, group_advantages, grpo_objective, kl_penalty, load_checkpoint, save_checkpoint, smoothed,
    train, train_step,
)
from dualrank.reward import RewardSpec
from dualrank.synthetic import separable_instances


def test_advantage_examples():
    assert np.allclose(group_advantages([1.0, 0.0, 0.5]), [1.2247418713989375, -1.2247418713989375, 0.0],
                       atol=1e-12)
    assert group_advantages([0.7] * 4).tolist() == [0.0] * 4
    assert np.allclose(group_advantages([1.0, 0.0]), [0.999998000004, -0.999998000004], atol=1e-12)
    with pytest.raises(ValueError):
        group_advantages([1.0])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=16))
def test_advantages_zero_mean(rewards):
    a = group_advantages(rewards)
    assert abs(a.sum()) < 1e-9 * len(rewards)


def test_clipped_surrogate_examples():
    assert clipped_surrogate(1.5, 1.0) == pytest.approx(1.28)
    assert clipped_surrogate(0.5, -1.0) == pytest.approx(-0.8)
    for a in (-2.0, -0.3, 0.0, 0.7):
        assert clipped_surrogate(1.0, a) == a
    # symmetric clipping when both ends match
    assert clipped_surrogate(1.5, 1.0, 0.2, 0.2) == pytest.approx(1.2)


def test_kl_examples():
    assert kl_penalty(0.0, 0.0) == 0.0
    assert kl_penalty(0.0, math.log(2)) == pytest.approx(0.306852819440054691, abs=1e-15)
    assert kl_penalty(0.0, -math.log(2)) == pytest.approx(0.193147180559945309, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 0), st.floats(-20, 0))
def test_kl_nonnegative(a, b):
    assert kl_penalty(a, b) >= 0.0


def _instance(labels=(1, 0, 0, 1), gid="p#g0"):
    cands = tuple(f"print({i})\n" + "#" * (10 * i) for i in range(len(labels)))
    return TrainingInstance(gid, "p", cands, tuple(labels))


def test_featurize_shapes_and_determinism():
    inst = _instance()
    phi = featurize(inst, FeatureConfig(length=True, label_signal=True))
    assert phi.shape == (4, 2)
    assert abs(phi[:, 0].sum()) < 1e-12
    assert np.array_equal(phi, featurize(inst, FeatureConfig(length=True, label_signal=True)))
    with pytest.raises(ValueError):
        featurize(inst, FeatureConfig(length=False))


def test_rollouts_round_trip_through_parser():
    inst = _instance()
    policy = PlackettLucePolicy(failure_rate=0.3)
    cfg = TrainerConfig(group_size=32)
    g = collect_rollouts(inst, policy, PolicyParams([1.0]), cfg, RewardSpec(), np.random.default_rng(0))
    failed = [r for r in g.responses if r.ranking is None]
    assert failed and len(failed) < 32
    assert all(g.rewards[i] == -1.0 for i, r in enumerate(g.responses) if r.ranking is None)
    assert all(0.0 <= g.rewards[i] <= 1.0 for i, r in enumerate(g.responses) if r.ranking is not None)


def test_ratio_one_objective_is_vanilla_policy_gradient():
    inst = _instance()
    policy = PlackettLucePolicy(FeatureConfig(label_signal=True))
    params = PolicyParams([0.3, -0.2])
    cfg = TrainerConfig(group_size=8)
    g = collect_rollouts(inst, policy, params, cfg, RewardSpec(), np.random.default_rng(4))
    obj, grad, stats = grpo_objective([g], [inst], policy, params, params, cfg)
    assert obj == pytest.approx(g.advantages.mean(), abs=1e-12)
    vanilla = sum(a * policy.grad_logprob(inst, params, r) for r, a in zip(g.responses, g.advantages)) / 8
    assert np.allclose(grad, vanilla, atol=1e-12)
    assert stats["clip_frac"] == 0.0 and stats["kl"] == 0.0


def test_objective_gradient_matches_finite_differences():
    inst = _instance()
    policy = PlackettLucePolicy(FeatureConfig(label_signal=True))
    old = PolicyParams([0.1, 0.4])
    ref = PolicyParams([0.0, 0.0])
    cfg = TrainerConfig(group_size=8, kl_coeff=0.05)
    g = collect_rollouts(inst, policy, old, cfg, RewardSpec(), np.random.default_rng(9))
    cur = PolicyParams([0.12, 0.41])  # near old, so nothing clips
    _, grad, stats = grpo_objective([g], [inst], policy, cur, ref, cfg)
    assert stats["clip_frac"] == 0.0
    h = 1e-6
    num = []
    for e in np.eye(2):
        hi = grpo_objective([g], [inst], policy, PolicyParams(cur.weights + h * e), ref, cfg)[0]
        lo = grpo_objective([g], [inst], policy, PolicyParams(cur.weights - h * e), ref, cfg)[0]
        num.append((hi - lo) / (2 * h))
    assert np.allclose(grad, num, rtol=1e-5, atol=1e-9)


def test_zero_update_when_rewards_equal():
    # a policy that always fails the format earns identical rewards
    inst = _instance()
    policy = PlackettLucePolicy(failure_rate=1.0)
    params = PolicyParams([0.7])
    new, m = train_step([inst], params, params, TrainerConfig(), RewardSpec(), policy)
    assert np.array_equal(new.weights, params.weights)
    assert m.mean_reward == -1.0 and m.mean_abs_adv == 0.0


def test_zero_learning_rate_freezes_params():
    inst = _instance()
    params = PolicyParams([0.25])
    new, _ = train_step([inst], params, params, TrainerConfig(learning_rate=0.0), RewardSpec())
    assert np.array_equal(new.weights, params.weights)


def test_train_is_deterministic_and_worker_independent():
    data = separable_instances(40, seed=2)
    policy = PlackettLucePolicy(FeatureConfig(label_signal=True))
    cfg = TrainerConfig(epochs=2, batch_size=8, seed=5)
    p1, t1 = train(data, cfg, RewardSpec(), policy)
    p2, t2 = train(data, cfg, RewardSpec(), PlackettLucePolicy(FeatureConfig(label_signal=True)), workers=4)
    assert np.array_equal(p1.weights, p2.weights)
    assert [m.to_record() for m in t1] == [m.to_record() for m in t2]


def test_single_batch_epoch_equals_train_step():
    data = separable_instances(8, seed=1)
    cfg = TrainerConfig(epochs=1, batch_size=8, seed=3)
    policy = PlackettLucePolicy(FeatureConfig(label_signal=True))
    params, traj = train(data, cfg, RewardSpec(), policy)
    order = np.random.default_rng([3, 2**31, 0]).permutation(8)
    p0 = policy.init_params()
    step_params, m = train_step([data[i] for i in order], p0, p0, cfg, RewardSpec(), policy, 0)
    assert np.array_equal(params.weights, step_params.weights)
    assert traj == [m]


def test_instances_unchanged_by_training():
    data = separable_instances(16, seed=4)
    before = [inst.to_record() for inst in data]
    train(data, TrainerConfig(epochs=1, batch_size=4), RewardSpec(), PlackettLucePolicy(FeatureConfig(label_signal=True)))
    assert [inst.to_record() for inst in data] == before


def test_smoothed_reward_trends_up_on_separable_fixture():
    data = separable_instances(200, seed=0)
    cfg = TrainerConfig(epochs=8, batch_size=8)
    _, traj = train(data, cfg, RewardSpec(), PlackettLucePolicy(FeatureConfig(label_signal=True)))
    s = smoothed([m.mean_reward for m in traj], 20)
    # non-decreasing once the window is full, up to sampling noise near the ceiling
    assert np.all(np.diff(s[19:]) > -0.005)
    assert s[-1] > s[0] + 0.4
    assert max(m.mean_reward for m in traj) <= 1.0


def test_smoothed_window():
    assert smoothed([1, 2, 3, 4], 2).tolist() == [1.0, 1.5, 2.5, 3.5]
    assert smoothed([], 5).size == 0


def test_checkpoint_round_trip(tmp_path):
    cfg = TrainerConfig(kl_coeff=0.001, seed=9)
    save_checkpoint(tmp_path / "c.json", PolicyParams([0.5, -1.25]), cfg)
    params, cfg2 = load_checkpoint(tmp_path / "c.json")
    assert params.weights.tolist() == [0.5, -1.25] and cfg2 == cfg


def test_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(group_size=1)
    with pytest.raises(ValueError):
        TrainerConfig(clip_low=0.3, clip_high=0.2)
    with pytest.raises(ValueError):
        TrainerConfig(format_failure_rate=1.5)
