"""Exchange-strategy tests: pairing, swaps, run equivalences, and selection."""

import numpy as np
import pytest

from revcur.curriculum import CurriculumConfig, StartPool
from revcur.envs import EVAL_GRID, Band, PoseMode, make_env
from revcur.errors import ConfigurationError
from revcur.parallel import (
    EnsemblePolicy,
    ModelSet,
    PairingPlan,
    Strategy,
    SwapSchedule,
    _arcg_sync,
    _ParamVectors,
    ensemble_policy,
    evaluate_grid,
    make_pairing,
    select_best,
    swap_critics,
    swap_pools,
    train,
)
from revcur.ppo import ActorCritic, PpoConfig

from helpers import BeelinePolicy, ConstantPolicy

SMALL_CURRICULUM = CurriculumConfig(n_new=10, n_old=5, n_total=40, rollouts_per_start=8)
SMALL_PPO = PpoConfig(batch_size=64, minibatch_size=32, epochs_per_update=2)


def model_set(m, seed0=100, hidden=(8,), env_name="pointmaze-open", **kwargs):
    env = make_env(env_name)
    rngs = [np.random.default_rng(seed0 + i) for i in range(m)]
    return ModelSet.initialize(env, m, rngs, hidden_dims=hidden, lr=1e-3, **kwargs)


def run_train(ms, strategy, iterations, k=20, period=10, orch_seed=777, env_name="pointmaze-open"):
    return train(
        lambda: make_env(env_name),
        ms,
        SwapSchedule(strategy, k=k, async_sync_period=period),
        SMALL_CURRICULUM,
        SMALL_PPO,
        iterations,
        np.random.default_rng(orch_seed),
        select_episodes_per_band=4,
    )


def assert_models_equal(a, b):
    assert np.array_equal(a.policy.params, b.policy.params)
    assert np.array_equal(a.policy.log_std, b.policy.log_std)
    assert np.array_equal(a.critic_params, b.critic_params)
    assert np.array_equal(a.opt_critic.first_moment, b.opt_critic.first_moment)
    assert a.opt_critic.step_count == b.opt_critic.step_count


# ---------------------------------------------------------------------------
# pairing


def test_make_pairing_m2_is_unique():
    for seed in range(5):
        plan = make_pairing(2, np.random.default_rng(seed))
        assert sorted(plan.pairs[0]) == [0, 1]


def test_make_pairing_rejects_odd_and_tiny():
    with pytest.raises(ConfigurationError):
        make_pairing(3, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        make_pairing(0, np.random.default_rng(0))


def test_make_pairing_covers_all_indices():
    rng = np.random.default_rng(5)
    for m in (4, 6, 8):
        for _ in range(20):
            plan = make_pairing(m, rng)
            assert sorted(i for pair in plan.pairs for i in pair) == list(range(m))


def test_make_pairing_m4_uniform_over_matchings():
    rng = np.random.default_rng(42)
    counts = {}
    for _ in range(10_000):
        plan = make_pairing(4, rng)
        key = frozenset(frozenset(p) for p in plan.pairs)
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 3
    for n in counts.values():
        assert n / 10_000 == pytest.approx(1 / 3, abs=0.02)


def test_pairing_plan_validation():
    with pytest.raises(ConfigurationError):
        PairingPlan(((0, 0),))
    with pytest.raises(ConfigurationError):
        PairingPlan(((0, 1), (1, 2)))
    plan = PairingPlan(((0, 1),))
    with pytest.raises(ConfigurationError):
        plan.validate_for(4)


# ---------------------------------------------------------------------------
# swaps


def test_swap_critics_moves_parameters_and_optimizer():
    ms = model_set(2)
    ones = np.ones_like(ms.models[0].critic_params)
    ms.models[0].critic_params = ones * 1.0
    ms.models[1].critic_params = ones * 2.0
    ms.models[0].opt_critic.first_moment[:] = 7.0
    actors_before = [m.policy for m in ms.models]
    swap_critics(ms, PairingPlan(((0, 1),)))
    assert np.all(ms.models[0].critic_params == 2.0)
    assert np.all(ms.models[1].critic_params == 1.0)
    assert np.all(ms.models[1].opt_critic.first_moment == 7.0)
    assert [m.policy for m in ms.models] == actors_before


def test_swap_critics_involution_and_multiset():
    for seed in range(10):
        ms = model_set(4, seed0=seed * 10)
        plan = make_pairing(4, np.random.default_rng(seed))
        before = [m.critic_params.copy() for m in ms.models]
        swap_critics(ms, plan)
        after_once = [m.critic_params.copy() for m in ms.models]
        key = lambda arrs: sorted(a.tobytes() for a in arrs)
        assert key(before) == key(after_once)
        swap_critics(ms, plan)
        for orig, now in zip(before, ms.models):
            assert np.array_equal(orig, now.critic_params)


def test_swap_pools_moves_both_pools_with_tags():
    ms = model_set(2)
    ms.archive[0].extend([np.array([0.1, 0.2])], 3)
    ms.working[1].extend([np.array([0.5, 0.5])], 3)
    nets_before = [(m.policy, m.critic_params) for m in ms.models]
    swap_pools(ms, PairingPlan(((0, 1),)))
    assert ms.archive[1].iteration_tags == [0, 3]
    assert np.array_equal(ms.archive[1].states[-1], [0.1, 0.2])
    assert len(ms.working[0]) == 2
    swap_pools(ms, PairingPlan(((0, 1),)))
    assert ms.archive[0].iteration_tags == [0, 3]
    assert [(m.policy, m.critic_params) for m in ms.models] == nets_before


def test_swap_pools_rejects_shared_pools():
    ms = model_set(2, shared_pools=True)
    with pytest.raises(ConfigurationError):
        swap_pools(ms, PairingPlan(((0, 1),)))


# ---------------------------------------------------------------------------
# model set


def test_model_set_goal_seeded_pools():
    ms = model_set(3)
    env = make_env("pointmaze-open")
    for pool in ms.working + ms.archive:
        assert len(pool) == 1
        assert np.array_equal(pool.states[0], env.goals[0])
        assert pool.iteration_tags == [0]


def test_model_set_shared_pools_single_slot():
    ms = model_set(4, shared_pools=True)
    assert len(ms.working) == 1 and len(ms.archive) == 1
    assert all(ms.pool_slot(i) == 0 for i in range(4))


def test_model_set_share_init_clones_model_zero():
    ms = model_set(3, share_init=True)
    assert_models_equal(ms.models[0], ms.models[1])
    assert_models_equal(ms.models[0], ms.models[2])
    assert ms.models[0].policy is not ms.models[1].policy


def test_model_set_validation():
    env = make_env("pointmaze-open")
    with pytest.raises(ConfigurationError):
        ModelSet.initialize(env, 0, [])
    with pytest.raises(ConfigurationError):
        ModelSet.initialize(env, 2, [np.random.default_rng(0)])


def test_auto_log_std_is_quarter_action_range():
    ms = model_set(1)
    assert ms.models[0].policy.log_std == pytest.approx(np.log(0.1 / 4.0), abs=1e-12)


# ---------------------------------------------------------------------------
# train equivalences


def test_no_exchange_pair_equals_two_single_runs():
    pair = model_set(2, seed0=300)
    res_pair = run_train(pair, Strategy.NO_EXCHANGE, 4)
    for i in range(2):
        single = model_set(1, seed0=300 + i)
        res_single = run_train(single, Strategy.NO_EXCHANGE, 4)
        assert_models_equal(res_pair.model_set.models[i], res_single.model_set.models[0])
        pair_records = [r for r in res_pair.records if r.model_id == i]
        solo_records = res_single.records
        for a, b in zip(pair_records, solo_records):
            assert a.success_rate == b.success_rate
            assert a.mean_return == b.mean_return
            assert a.actor_loss == b.actor_loss
            assert a.archive_size == b.archive_size


def test_k_beyond_horizon_equals_no_exchange():
    a = model_set(2, seed0=40)
    b = model_set(2, seed0=40)
    res_a = run_train(a, Strategy.SWAP_CRITICS, 4, k=50)
    res_b = run_train(b, Strategy.NO_EXCHANGE, 4)
    assert res_a.swap_events == []
    for ma, mb in zip(res_a.model_set.models, res_b.model_set.models):
        assert_models_equal(ma, mb)
    assert res_a.records == res_b.records
    assert res_a.selection.scores == res_b.selection.scores
    assert res_a.best_index == res_b.best_index


def test_swap_fires_on_schedule():
    ms = model_set(2, seed0=60)
    res = run_train(ms, Strategy.SWAP_CRITICS, 10, k=3)
    assert [e.iteration for e in res.swap_events] == [3, 6, 9]
    assert all(e.kind == "critics" for e in res.swap_events)
    assert all(sorted(e.pairs[0]) == [0, 1] for e in res.swap_events)


def test_train_is_reproducible():
    first = run_train(model_set(2, seed0=88), Strategy.SWAP_INIT_POOLS, 5, k=2)
    second = run_train(model_set(2, seed0=88), Strategy.SWAP_INIT_POOLS, 5, k=2)
    assert first.records == second.records
    assert first.swap_events == second.swap_events
    for ma, mb in zip(first.model_set.models, second.model_set.models):
        assert_models_equal(ma, mb)


def test_train_validates_configuration():
    with pytest.raises(ConfigurationError):
        run_train(model_set(3), Strategy.SWAP_CRITICS, 2)
    with pytest.raises(ConfigurationError):
        run_train(model_set(2), Strategy.COMMON_POOL_NO_SWAP, 2)
    with pytest.raises(ConfigurationError):
        run_train(model_set(2, shared_pools=True), Strategy.NO_EXCHANGE, 2)
    with pytest.raises(ConfigurationError):
        run_train(model_set(1), Strategy.ENSEMBLE, 2)
    with pytest.raises(ConfigurationError):
        run_train(model_set(1), Strategy.NO_EXCHANGE, 0)


def test_common_pool_archive_collects_all_survivors():
    ms = model_set(2, seed0=10, shared_pools=True)
    res = run_train(ms, Strategy.COMMON_POOL_NO_SWAP, 5)
    survivors = sum(r.n_survivors for r in res.records)
    assert len(res.model_set.archive[0]) == 1 + survivors
    assert res.swap_events == []
    # both models report the same shared pool sizes at each barrier
    by_iter = {}
    for r in res.records:
        by_iter.setdefault(r.iteration, []).append((r.pool_size, r.archive_size))
    for sizes in by_iter.values():
        assert sizes[0] == sizes[1]


# ---------------------------------------------------------------------------
# async sync


def arcg_fixture(m=2):
    ms = model_set(m, seed0=500, share_init=True)
    central = _ParamVectors.of(ms.models[0])
    snaps = [_ParamVectors.of(model) for model in ms.models]
    return ms, central, snaps


def test_arcg_opposite_deltas_cancel():
    # zeroed params keep the delta arithmetic exact, so equality is bitwise
    ms, central, snaps = arcg_fixture()
    for model in ms.models:
        model.policy = type(model.policy)(
            model.policy.spec, np.zeros_like(model.policy.params), model.policy.log_std.copy()
        )
    central = _ParamVectors.of(ms.models[0])
    snaps = [_ParamVectors.of(model) for model in ms.models]
    base = central.mean.copy()
    delta = np.full_like(base, 0.25)
    p0, p1 = ms.models[0].policy, ms.models[1].policy
    ms.models[0].policy = type(p0)(p0.spec, p0.params + delta, p0.log_std.copy())
    ms.models[1].policy = type(p1)(p1.spec, p1.params - delta, p1.log_std.copy())
    _arcg_sync(ms, central, snaps)
    assert np.array_equal(central.mean, base)
    for model in ms.models:
        assert np.array_equal(model.policy.params, base)


def test_arcg_sum_of_deltas_reaches_central():
    ms, central, snaps = arcg_fixture()
    base = central.critic.copy()
    ms.models[0].critic_params = ms.models[0].critic_params + 1.0
    ms.models[1].critic_params = ms.models[1].critic_params + 2.0
    _arcg_sync(ms, central, snaps)
    assert np.allclose(central.critic, base + 3.0)
    for model in ms.models:
        assert np.allclose(model.critic_params, base + 3.0)


def test_arcg_period_beyond_horizon_equals_no_exchange():
    a = model_set(2, seed0=70, share_init=True)
    b = model_set(2, seed0=70, share_init=True)
    res_a = run_train(a, Strategy.ASYNC_SYNC, 3, period=50)
    res_b = run_train(b, Strategy.NO_EXCHANGE, 3)
    assert res_a.swap_events == []
    for ma, mb in zip(res_a.model_set.models, res_b.model_set.models):
        assert_models_equal(ma, mb)
    assert res_a.records == res_b.records


def test_arcg_single_model_sync_is_identity():
    a = model_set(1, seed0=71)
    b = model_set(1, seed0=71)
    res_a = run_train(a, Strategy.ASYNC_SYNC, 4, period=2)
    res_b = run_train(b, Strategy.NO_EXCHANGE, 4)
    assert [e.iteration for e in res_a.swap_events] == [2, 4]
    assert_models_equal(res_a.model_set.models[0], res_b.model_set.models[0])
    assert res_a.records == res_b.records


def test_arcg_sync_broadcast_makes_models_identical():
    ms = model_set(2, seed0=72, share_init=True)
    res = run_train(ms, Strategy.ASYNC_SYNC, 2, period=2)
    assert [e.iteration for e in res.swap_events] == [2]
    # parameters broadcast from the central copy; optimizer moments stay local
    a, b = res.model_set.models
    assert np.array_equal(a.policy.params, b.policy.params)
    assert np.array_equal(a.policy.log_std, b.policy.log_std)
    assert np.array_equal(a.critic_params, b.critic_params)


# ---------------------------------------------------------------------------
# ensemble


def constant_critic_model(level, seed=0):
    model = ActorCritic.initialize(2, 2, (4,), -3.0, 1e-3, np.random.default_rng(seed))
    model.critic_params = np.zeros_like(model.critic_params)
    model.critic_params[-1] = level  # all-zero weights leave only the output bias
    return model


def test_constant_critic_helper():
    model = constant_critic_model(0.42)
    assert model.value(np.array([0.3, 0.9])) == pytest.approx(0.42, abs=1e-12)


def test_ensemble_picks_dominating_critic():
    low, high = constant_critic_model(0.1, seed=1), constant_critic_model(0.9, seed=2)
    ens = ensemble_policy([low, high])
    state = np.array([0.5, 0.5])
    assert ens.choose(state) == 1
    assert np.array_equal(ens.mean_action(state), high.policy.mean_action(state))
    assert ens.for_episode(state) is high.policy


def test_ensemble_tie_breaks_to_lowest_index():
    a, b = constant_critic_model(0.5, seed=3), constant_critic_model(0.5, seed=4)
    ens = ensemble_policy([a, b])
    assert ens.choose(np.array([0.2, 0.2])) == 0


def test_ensemble_identical_members_match_single():
    model = constant_critic_model(0.3, seed=5)
    twin = model.copy()
    ens = ensemble_policy([model, twin])
    state = np.array([0.7, 0.1])
    assert np.array_equal(ens.mean_action(state), model.policy.mean_action(state))


def test_ensemble_needs_two_models():
    with pytest.raises(ConfigurationError):
        ensemble_policy([constant_critic_model(0.5)])


def test_ensemble_custom_arbiter():
    a, b = constant_critic_model(0.9, seed=6), constant_critic_model(0.1, seed=7)
    ens = ensemble_policy([a, b], arbiter=lambda state: 1)
    assert ens.for_episode(np.zeros(2)) is b.policy


def test_train_ensemble_returns_committee():
    ms = model_set(2, seed0=90)
    res = run_train(ms, Strategy.ENSEMBLE, 3)
    assert isinstance(res.best_policy, EnsemblePolicy)
    assert res.best_index is None
    assert res.selection is None


# ---------------------------------------------------------------------------
# evaluation and selection


def scripted_model(env):
    """ActorCritic shell whose policy beelines to the goal."""
    model = ActorCritic.initialize(2, 2, (4,), -3.0, 1e-3, np.random.default_rng(0))
    model.policy = BeelinePolicy(env.goals[0])
    return model


def test_evaluate_grid_shape_and_order():
    env = make_env("pointmaze-open")
    rows = evaluate_grid(env, BeelinePolicy(env.goals[0]), 3, np.random.default_rng(0))
    assert [(r.band, r.pose_mode) for r in rows] == [(c.band, c.pose_mode) for c in EVAL_GRID]
    assert all(r.episodes == 3 for r in rows)


def test_evaluate_grid_beeline_solves_reachable_cells():
    # speed 0.05 over 10 steps covers 0.5; variable far starts can sit beyond
    env = make_env("pointmaze-open")
    rows = evaluate_grid(env, BeelinePolicy(env.goals[0]), 5, np.random.default_rng(1))
    for r in rows:
        if r.band is Band.FAR and r.pose_mode is PoseMode.VARIABLE:
            continue
        assert r.success_rate == 1.0
        assert 0.9 < r.mean_return <= 0.99


def test_evaluate_grid_returns_discount_with_distance():
    env = make_env("pointmaze-open")
    rows = evaluate_grid(env, BeelinePolicy(env.goals[0]), 4, np.random.default_rng(2))
    by_band = {r.band: r.mean_return for r in rows if r.pose_mode is PoseMode.FIXED}
    assert by_band[Band.NEAR] > by_band[Band.MID] > by_band[Band.FAR]


def test_select_best_prefers_scripted_policy():
    env = make_env("pointmaze-open")
    good = scripted_model(env)
    bad = ActorCritic.initialize(2, 2, (4,), -3.0, 1e-3, np.random.default_rng(9))
    pools = lambda: [StartPool([env.goals[0]], 0), StartPool([env.goals[0]], 0)]
    ms = ModelSet(
        [bad, good], pools(), pools(), [np.random.default_rng(1), np.random.default_rng(2)]
    )
    report = select_best(ms, env, 4, np.random.default_rng(3))
    assert report.best_index == 1
    assert report.scores[1] > 0.8  # only variable far starts can be out of reach
    assert report.scores[1] > report.scores[0]
    assert all(len(table) == 6 for table in report.tables)


def test_select_best_tie_breaks_to_lowest_index():
    # marching away from the goal scores exactly zero everywhere, so both tie
    env = make_env("pointmaze-open")
    away = lambda: ConstantPolicy(np.array([-0.05, 0.05]))
    m0 = ActorCritic.initialize(2, 2, (4,), -3.0, 1e-3, np.random.default_rng(11))
    m1 = ActorCritic.initialize(2, 2, (4,), -3.0, 1e-3, np.random.default_rng(12))
    m0.policy, m1.policy = away(), away()
    ms = ModelSet(
        [m0, m1],
        [StartPool([env.goals[0]], 0)] * 2,
        [StartPool([env.goals[0]], 0)] * 2,
        [np.random.default_rng(1), np.random.default_rng(2)],
    )
    report = select_best(ms, env, 3, np.random.default_rng(4))
    assert report.scores[0] == report.scores[1] == 0.0
    assert report.best_index == 0


def test_select_best_single_model():
    env = make_env("pointmaze-open")
    ms = ModelSet(
        [scripted_model(env)],
        [StartPool([env.goals[0]], 0)],
        [StartPool([env.goals[0]], 0)],
        [np.random.default_rng(1)],
    )
    assert select_best(ms, env, 3, np.random.default_rng(5)).best_index == 0
