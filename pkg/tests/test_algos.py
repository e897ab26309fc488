import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from ludor.algos import (
    PHASES,
    AlgoConfig,
    OrilConfig,
    baseline_bc_step,
    baseline_combined_step,
    fit_reward_model,
    iql_step,
    kappa_cosine,
    labeled_batch,
    ludor_train_step,
    make_bundle,
    oril_label,
    pair_batch,
    pretrain_teacher,
    td3bc_step,
    teacher_bc_step,
    uds_merge,
    uniform_weights,
)
from ludor.algos.bundle import Batch
from ludor.algos.iql import awr_actor_loss
from ludor.algos.td3bc import critic_loss
from ludor.data import LabeledDataset, UnlabeledDataset, generate_dataset, strip_labels, subsample
from ludor.envs import env_step, expert_action, get_env
from ludor.errors import ConfigurationError, DatasetError
from ludor.nn import AdamState, build_mlp, make_rng, mlp_apply

GOLDEN = json.loads((Path(__file__).parent / "golden" / "golden.json").read_text())
PM = get_env("pointmass-2d")
SMALL = AlgoConfig(hidden=(16, 16), batch_size=32)


@pytest.fixture(scope="module")
def medium():
    return generate_dataset("pointmass-2d", "medium", 1000, 0)


@pytest.fixture(scope="module")
def expert_pairs():
    return strip_labels(generate_dataset("pointmass-2d", "expert", 600, 1))


def batch_of(ds, seed=0, n=32):
    return labeled_batch(ds, make_rng(seed, 3).integers(0, len(ds), n))


def flats(bundle):
    return {k: v.flat.copy() for k, v in bundle.nets.items()}


def test_config_defaults_follow_hyperparameter_table():
    c = AlgoConfig()
    assert (c.discount, c.tau, c.policy_noise, c.noise_clip, c.policy_freq, c.alpha) == (0.99, 0.005, 0.2, 0.5, 2, 2.5)
    assert (c.beta, c.iql_tau, c.iql_deterministic, c.ema, c.teacher_update_freq) == (3.0, 0.7, True, 0.9, 2)
    assert (c.batch_size, c.actor_lr, c.qf_lr, c.pretrain_num_epochs, c.expl_noise) == (256, 3e-4, 3e-4, 1, 0.1)
    with pytest.raises(ConfigurationError):
        AlgoConfig.from_dict({"not_a_key": 1})
    with pytest.raises(ConfigurationError):
        AlgoConfig(discount=1.0)
    with pytest.raises(ConfigurationError):
        AlgoConfig(discount=-0.1)


def test_gamma_zero_target_is_reward(medium):
    config = replace(SMALL, discount=0.0)
    bundle = make_bundle(PM, config, 0, "td3bc")
    b = batch_of(medium)
    before, _, _ = critic_loss(bundle["q1"], b.states, b.actions, b.rewards, uniform_weights(32))
    after_bundle, m = td3bc_step(bundle, b, uniform_weights(32), config, 1, make_rng(0, 5))
    assert m["q1_loss"] == pytest.approx(before)
    after, _, _ = critic_loss(after_bundle["q1"], b.states, b.actions, b.rewards, uniform_weights(32))
    assert after < before


@pytest.mark.parametrize("base", ["td3bc", "iql"])
def test_all_twos_kappa_equals_uniform(medium, base):
    bundle = make_bundle(PM, SMALL, 0, base)
    b = batch_of(medium)
    step = td3bc_step if base == "td3bc" else iql_step
    twos = kappa_cosine(b.actions, b.actions)
    assert np.all(twos.values == 2.0)
    x, _ = step(bundle, b, twos, SMALL, 2, make_rng(0, 5))
    y, _ = step(bundle, b, uniform_weights(32), SMALL, 2, make_rng(0, 5))
    for k in x.nets:
        assert np.array_equal(x[k].flat, y[k].flat), k


def test_td3bc_step_matches_golden():
    g = GOLDEN["td3bc_step"]
    config = AlgoConfig(hidden=tuple(g["hidden"]), batch_size=g["batch_size"])
    bundle = make_bundle(PM, config, 0, "td3bc")
    ds = generate_dataset("pointmass-2d", "medium", 500, 0)
    b = labeled_batch(ds, make_rng(0, 3).integers(0, len(ds), 32))
    rng = make_rng(0, 5)
    got = {}
    for step in (1, 2):
        bundle, m = td3bc_step(bundle, b, uniform_weights(32), config, step, rng)
        got.update({f"step{step}_{k}": v for k, v in m.items()})
    assert set(got) == set(g["metrics"])
    for k, v in g["metrics"].items():
        assert got[k] == pytest.approx(v, rel=1e-9, abs=1e-12), k
    assert bundle["actor"].flat.sum() == pytest.approx(g["actor_sum"], rel=1e-9)


def test_td3bc_actor_only_every_policy_freq(medium):
    bundle = make_bundle(PM, SMALL, 0, "td3bc")
    b = batch_of(medium)
    after1, m1 = td3bc_step(bundle, b, uniform_weights(32), SMALL, 1, make_rng(0, 5))
    assert "actor_loss" not in m1
    assert np.array_equal(after1["actor"].flat, bundle["actor"].flat)
    assert np.array_equal(after1["q1_target"].flat, bundle["q1_target"].flat)
    after2, m2 = td3bc_step(after1, b, uniform_weights(32), SMALL, 2, make_rng(0, 5))
    assert "actor_loss" in m2 and not np.array_equal(after2["actor_target"].flat, after1["actor_target"].flat)


def test_awr_weights_are_one_when_advantage_zero():
    r = make_rng(0, 0)
    pi = build_mlp(4, 2, (8,), r, out_scale=2.0)
    s, a = r.normal(size=(16, 4)), r.uniform(-2, 2, (16, 2))
    exp_adv = np.exp(np.minimum(3.0 * np.zeros(16), np.log(100.0)))
    assert np.all(exp_adv == 1.0)
    loss, _ = awr_actor_loss(pi, s, a, exp_adv, uniform_weights(16))
    assert loss == pytest.approx(np.mean(np.sum((mlp_apply(pi, s) - a) ** 2, axis=1)))


def test_iql_step_trains_value_and_critics(medium):
    bundle = make_bundle(PM, SMALL, 0, "iql")
    b = batch_of(medium)
    out, m = iql_step(bundle, b, uniform_weights(32), SMALL, 1)
    for k in ("v", "q1", "q2", "actor", "q1_target"):
        assert not np.array_equal(out[k].flat, bundle[k].flat), k
    assert {"v_loss", "q1_loss", "actor_loss"} <= set(m)


def test_teacher_bc_overfits_fixed_batch():
    r = make_rng(0, 0)
    # default width; the default 3e-4 rate reaches only about 3% in 100 steps
    teacher = build_mlp(4, 2, (256, 256), r, out_scale=2.0)
    state = AdamState.fresh(teacher.n_params, 1e-3)
    pairs = strip_labels(generate_dataset("pointmass-2d", "expert", 256, 0))
    b = Batch(pairs.states, pairs.actions)
    losses = []
    for _ in range(100):
        teacher, state, loss = teacher_bc_step(teacher, state, b)
        losses.append(loss)
    assert np.all(np.diff(losses) <= 0.0)
    assert losses[-1] < 0.01 * losses[0]


def test_teacher_bc_at_fixed_point_barely_moves():
    teacher = build_mlp(4, 2, (8,), make_rng(0), out_scale=2.0)
    s = make_rng(1).normal(size=(16, 4))
    new, _, loss = teacher_bc_step(teacher, AdamState.fresh(teacher.n_params), Batch(s, mlp_apply(teacher, s)))
    assert loss == 0.0
    np.testing.assert_array_equal(new.flat, teacher.flat)


def test_pretrain_copies_teacher_bitwise(expert_pairs):
    bundle = make_bundle(PM, SMALL, 0, "td3bc")
    out, losses = pretrain_teacher(bundle, expert_pairs, replace(SMALL, teacher_lr=3e-3), make_rng(0, 6))
    assert np.array_equal(out["actor"].flat, out["teacher"].flat)
    assert np.array_equal(out["actor_target"].flat, out["teacher"].flat)
    assert len(losses) == int(np.ceil(len(expert_pairs) / 32))
    assert losses[-1] < losses[0]


def test_pretrain_zero_epochs_is_identity(expert_pairs):
    bundle = make_bundle(PM, SMALL, 0, "td3bc")
    out, losses = pretrain_teacher(bundle, expert_pairs, replace(SMALL, pretrain_num_epochs=0), make_rng(0, 6))
    assert out is bundle and losses == []


def test_ludor_phase_order(medium, expert_pairs):
    bundle = make_bundle(PM, SMALL, 0, "td3bc")
    lb = batch_of(medium)
    ub = pair_batch(expert_pairs, np.arange(32))
    _, m1 = ludor_train_step(bundle, lb, ub, SMALL, 1, make_rng(0, 5))
    _, m2 = ludor_train_step(bundle, lb, ub, SMALL, 2, make_rng(0, 5))
    assert m1["phases"] == ["ema", "kappa", "critic"]
    assert m2["phases"] == list(PHASES)
    bundle_iql = make_bundle(PM, SMALL, 0, "iql")
    _, m3 = ludor_train_step(bundle_iql, lb, ub, SMALL, 2, make_rng(0, 5))
    assert m3["phases"] == list(PHASES)


def test_kappa_uses_teacher_after_its_update(medium, expert_pairs):
    bundle = make_bundle(PM, SMALL, 0, "td3bc")
    lb = batch_of(medium)
    ub = pair_batch(expert_pairs, np.arange(32))
    new_teacher, _, _ = teacher_bc_step(bundle["teacher"], bundle.opt["teacher"], ub)
    want = kappa_cosine(lb.actions, mlp_apply(new_teacher, lb.states)).values.mean()
    _, m = ludor_train_step(bundle, lb, ub, SMALL, 2, make_rng(0, 5))
    assert m["mean_kappa"] == want


def test_degenerate_switches_reproduce_base_learner(medium, expert_pairs):
    off = replace(SMALL, ema=1.0, measure="uniform", use_teacher=False)
    for base, step_fn in (("td3bc", td3bc_step), ("iql", iql_step)):
        a = b = make_bundle(PM, off, 0, base)
        ra, rb = make_rng(0, 5), make_rng(0, 5)
        for step in range(1, 41):
            lb = batch_of(medium, step)
            ub = pair_batch(expert_pairs, np.arange(32))
            a, _ = ludor_train_step(a, lb, ub, off, step, ra)
            b, _ = step_fn(b, lb, uniform_weights(32), off, step, rb)
        for k in a.nets:
            assert np.array_equal(a[k].flat, b[k].flat), (base, k)


def test_teacher_matching_behaviour_gives_high_kappa():
    ds = generate_dataset("pointmass-2d", "medium", 5000, 0)
    assert kappa_cosine(ds.actions, expert_action(PM, ds.states)).values.mean() > 1.5


def test_baseline_bc_step_trio():
    pi = build_mlp(4, 2, (256, 256), make_rng(0), out_scale=2.0)
    state = AdamState.fresh(pi.n_params, 1e-3)
    pairs = strip_labels(generate_dataset("pointmass-2d", "expert", 256, 0))
    b = Batch(pairs.states, pairs.actions)
    _, _, first = baseline_bc_step(pi, state, b)
    for _ in range(100):
        pi, state, loss = baseline_bc_step(pi, state, b)
    assert loss < 0.01 * first
    fit = Batch(pairs.states, mlp_apply(pi, pairs.states))
    same, _, zero = baseline_bc_step(pi, AdamState.fresh(pi.n_params), fit)
    assert zero == 0.0 and np.array_equal(same.flat, pi.flat)


@pytest.mark.parametrize("base", ["td3bc", "iql"])
def test_combined_step_with_empty_unlabeled_is_base(medium, base):
    bundle = make_bundle(PM, SMALL, 0, base)
    lb = batch_of(medium)
    empty = Batch(np.zeros((0, 4)), np.zeros((0, 2)))
    step_fn = td3bc_step if base == "td3bc" else iql_step
    x, _ = baseline_combined_step(bundle, lb, empty, SMALL, 2, make_rng(0, 5))
    y, _ = step_fn(bundle, lb, uniform_weights(32), SMALL, 2, make_rng(0, 5))
    for k in x.nets:
        assert np.array_equal(x[k].flat, y[k].flat)


def test_combined_step_extra_term_zero_when_fitted(medium):
    bundle = make_bundle(PM, SMALL, 0, "td3bc")
    s = medium.states[:16]
    fitted = Batch(s, mlp_apply(bundle["actor"], s))
    _, m = baseline_combined_step(bundle, batch_of(medium), fitted, SMALL, 2, make_rng(0, 5))
    assert m["extra_bc"] == 0.0


def test_uds_merge(medium):
    pairs = strip_labels(subsample(generate_dataset("pointmass-2d", "expert", 2000, 4), 0.1, 1))
    merged = uds_merge(medium, pairs, seed=3)
    assert len(merged) == len(medium) + len(pairs)
    assert merged.provenance[-1]["successors"] == "provenance"
    rows = {tuple(s): i for i, s in enumerate(merged.states)}
    idx = [rows[tuple(s)] for s in pairs.states]
    assert np.all(merged.rewards[idx] == 0.0)
    src = subsample(generate_dataset("pointmass-2d", "expert", 2000, 4), 0.1, 1)
    np.testing.assert_array_equal(merged.next_states[idx], src.next_states)
    empty = UnlabeledDataset("pointmass-2d", "expert", np.zeros((0, 4)), np.zeros((0, 2)))
    same = uds_merge(medium, empty)
    np.testing.assert_array_equal(same.states, medium.states)


def test_uds_merge_falls_back_to_env_step(medium):
    r = make_rng(0, 0)
    s, a = r.uniform(-1, 1, (20, 4)), r.uniform(-2, 2, (20, 2))
    pairs = UnlabeledDataset("pointmass-2d", "expert", s, a, ({"op": "external"},))
    merged = uds_merge(medium, pairs, seed=0)
    assert merged.provenance[-1]["successors"] == "env_step"
    rows = {tuple(x): i for i, x in enumerate(merged.states)}
    idx = [rows[tuple(x)] for x in s]
    np.testing.assert_array_equal(merged.next_states[idx], env_step(PM, s, a)[0])


def test_uds_merge_rejects_other_env(medium):
    pend = strip_labels(generate_dataset("pendulum-swingup", "expert", 10, 0))
    with pytest.raises(DatasetError):
        uds_merge(medium, pend)


def _with_rewards(ds, rewards):
    return LabeledDataset(ds.env, ds.tier, ds.states, ds.actions, rewards, ds.next_states, ds.dones, ds.timeouts)


def test_oril_constant_reward():
    ds = generate_dataset("pointmass-2d", "medium", 1000, 0)
    const = _with_rewards(ds, np.full(len(ds), -0.7))
    pairs = strip_labels(generate_dataset("pointmass-2d", "expert", 300, 1))
    merged = oril_label(const, pairs, OrilConfig(), seed=0)
    assert len(merged) == len(ds) + len(pairs)
    rows = {tuple(x): i for i, x in enumerate(merged.states)}
    idx = [rows[tuple(x)] for x in pairs.states]
    np.testing.assert_allclose(merged.rewards[idx], -0.7, atol=1e-2)


def test_oril_linear_reward_r2():
    ds = generate_dataset("pointmass-2d", "medium", 4000, 0)
    w = np.array([0.5, -1.0, 0.25, 0.1])
    lin = _with_rewards(ds, ds.states @ w)
    model, _ = fit_reward_model(lin, OrilConfig(steps=3000), seed=0)
    test = generate_dataset("pointmass-2d", "medium", 1000, 9)
    pred = mlp_apply(model, np.concatenate([test.states, test.actions], 1))[:, 0]
    y = test.states @ w
    r2 = 1 - np.sum((pred - y) ** 2) / np.sum((y - y.mean()) ** 2)
    assert r2 > 0.95


def test_bundle_shapes():
    for base in ("td3bc", "iql"):
        b = make_bundle(PM, SMALL, 0, base)
        assert b["actor"].same_shape(b["teacher"])
        for src in ("q1", "q2"):
            assert b[f"{src}_target"].same_shape(b[src])
        assert ("actor_target" in b.nets) == (base == "td3bc") and ("v" in b.nets) == (base == "iql")
    with pytest.raises(ConfigurationError):
        b.update({"teacher": build_mlp(4, 2, (3,), make_rng(0), out_scale=2.0)})


@pytest.mark.parametrize("base", ["td3bc", "iql"])
def test_losses_finite_over_training_at_default_config(medium, expert_pairs, base):
    # default network and batch sizes, shortened run, three seeds
    config = AlgoConfig()
    for seed in range(3):
        bundle = make_bundle(PM, config, seed, base)
        bundle, _ = pretrain_teacher(bundle, expert_pairs, config, make_rng(seed, 6))
        r = make_rng(seed, 3)
        for step in range(1, 31):
            lb = labeled_batch(medium, r.integers(0, len(medium), 256))
            ub = pair_batch(expert_pairs, r.integers(0, len(expert_pairs), 256))
            bundle, m = ludor_train_step(bundle, lb, ub, config, step, make_rng(seed, 5))
            m.pop("phases")
            assert all(np.isfinite(v) for v in m.values())
