"""Counterfactual database construction, alignment and balanced selection."""

import itertools

import numpy as np
import pytest

from cfdial.bicogan import BiCoGanConfig, consistency_errors, train_bicogan, transitions_from_episodes
from cfdial.counterfactual import (CfDatabase, StrategySpec, alignment_error,
                                   balance_select, build_cf_database,
                                   select_counterfactual_actions)
from cfdial.dataset import Episode
from cfdial.dppr import TraitRegressor, progressive_estimate
from cfdial.seeding import derive_seed

D = 2


def _episodes(n, n_turns, seed, constant_action=None):
    rng = np.random.default_rng(seed)
    eps = []
    for i in range(n):
        states = rng.normal(0, 1, (n_turns + 1, D))
        if constant_action is None:
            actions = rng.normal(0, 1, (n_turns, D))
        else:
            actions = np.tile(constant_action, (n_turns, 1))
        eps.append(Episode(id=f"e{i:03d}", states=states, actions=actions,
                           outcome=float(rng.uniform(0, 20)),
                           traits=rng.uniform(1, 5, 5)))
    return eps


# -- action selection --------------------------------------------------------


def _rows(arr):
    return {tuple(row) for row in np.asarray(arr)}


def test_strategy_one_samples_subset_of_real_actions():
    eps = _episodes(6, 3, seed=0)
    picked = select_counterfactual_actions([e.actions for e in eps], StrategySpec(1, seed=3))
    real = set().union(*[_rows(e.actions) for e in eps])
    assert len(picked) == 6 and all(p.shape == (3, D) for p in picked)
    assert set().union(*[_rows(p) for p in picked]) <= real


@pytest.mark.parametrize("variant,skip", [(2, 1), (3, 3)])
def test_excluded_prefix_never_sampled(variant, skip):
    eps = _episodes(5, 4, seed=1)
    picked = select_counterfactual_actions([e.actions for e in eps],
                                           StrategySpec(variant, seed=9))
    banned = set().union(*[_rows(e.actions[:skip]) for e in eps])
    allowed = set().union(*[_rows(e.actions[skip:]) for e in eps])
    got = set().union(*[_rows(p) for p in picked])
    assert got <= allowed
    assert not (got & banned)


def test_strategy_three_with_short_dialogues_errors():
    eps = _episodes(4, 3, seed=2)      # every dialogue has exactly 3 actions
    with pytest.raises(ValueError, match="pool"):
        select_counterfactual_actions([e.actions for e in eps], StrategySpec(3))


def test_unknown_variant_rejected():
    with pytest.raises(ValueError, match="variant"):
        StrategySpec(4)


def test_selection_is_seeded():
    eps = _episodes(5, 3, seed=4)
    acts = [e.actions for e in eps]
    a = select_counterfactual_actions(acts, StrategySpec(2, seed=11))
    b = select_counterfactual_actions(acts, StrategySpec(2, seed=11))
    c = select_counterfactual_actions(acts, StrategySpec(2, seed=12))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert any(not np.array_equal(x, y) for x, y in zip(a, c))


def test_without_replacement_draws_are_unique():
    eps = _episodes(8, 2, seed=5)
    picked = select_counterfactual_actions([e.actions for e in eps],
                                           StrategySpec(1, seed=0), replace=False)
    flat = np.concatenate(picked)
    assert len(_rows(flat)) == flat.shape[0]


def test_without_replacement_needs_a_big_enough_pool():
    eps = _episodes(3, 4, seed=6)
    with pytest.raises(ValueError, match="replacement"):
        select_counterfactual_actions([e.actions for e in eps],
                                      StrategySpec(3, seed=0), replace=False)


# -- database construction ---------------------------------------------------


@pytest.fixture(scope="module")
def degenerate_fixture():
    # one action per dialogue and a single shared action vector, so strategy 1
    # can only ever re-pick the factual action
    action = np.array([0.4, -0.7])
    eps = _episodes(40, 1, seed=7, constant_action=action)
    cfg = BiCoGanConfig(hidden=16, batch_size=20, lr=1e-3, epochs=30, seed=3)
    model, _ = train_bicogan(transitions_from_episodes(eps), cfg)
    return eps, model


def test_factual_degenerate_database_matches_consistency_oracle(degenerate_fixture):
    eps, model = degenerate_fixture
    db = build_cf_database(model, eps, None, StrategySpec(1, seed=0), seed=21)
    step_errs = np.array([np.linalg.norm(cf.states[1] - ep.states[1])
                          for cf, ep in zip(db.episodes, eps)])
    oracle = consistency_errors(model, transitions_from_episodes(eps))
    # single-row vs batched matmul differ in the last ulps only
    assert np.allclose(step_errs, oracle, rtol=1e-9, atol=1e-12)
    assert (step_errs <= model.consistency_tol).mean() >= 0.9


def test_build_matches_manual_replay():
    eps = _episodes(6, 3, seed=8)
    cfg = BiCoGanConfig(hidden=16, batch_size=10, lr=1e-3, epochs=5, seed=1)
    model, _ = train_bicogan(transitions_from_episodes(eps), cfg)
    tm = TraitRegressor(D, window_size=1, hidden=8, key_dim=4, seed=2)
    strategy = StrategySpec(2, seed=0)

    db = build_cf_database(model, eps, tm, strategy, seed=33, index=4)

    rng = np.random.default_rng(33)
    sampled = select_counterfactual_actions([e.actions for e in eps], strategy, rng=rng)
    from cfdial.bicogan import generate_counterfactual
    for ep, acts, cf in zip(eps, sampled, db.episodes):
        states = [ep.states[0]]
        for t in range(ep.n_actions):
            L = progressive_estimate(tm, np.array(states), acts, t)
            states.append(generate_counterfactual(
                model, states[t], acts[t], L, noise_mode="abducted",
                s_next_factual=ep.states[t + 1]))
        assert cf.id == f"cf004-{ep.id}"
        assert cf.db_index == 4 and cf.source == "counterfactual"
        assert np.array_equal(cf.states, np.array(states))
        assert np.array_equal(cf.actions, acts)


def test_opening_state_kept_bit_exact(degenerate_fixture):
    eps, model = degenerate_fixture
    db = build_cf_database(model, eps, None, StrategySpec(1, seed=5), seed=6)
    assert len(db.episodes) == len(eps)
    for cf, ep in zip(db.episodes, eps):
        assert np.array_equal(cf.states[0], ep.states[0])
        assert cf.n_states == ep.n_states and cf.n_actions == ep.n_actions


def test_same_seed_same_database(degenerate_fixture):
    eps, model = degenerate_fixture
    a = build_cf_database(model, eps, None, StrategySpec(1, seed=0), seed=9)
    b = build_cf_database(model, eps, None, StrategySpec(1, seed=0), seed=9)
    for x, y in zip(a.episodes, b.episodes):
        assert x.equals(y)


def test_distinct_seeds_distinct_action_samples():
    eps = _episodes(6, 3, seed=10)
    cfg = BiCoGanConfig(hidden=16, batch_size=10, lr=1e-3, epochs=2, seed=1)
    model, _ = train_bicogan(transitions_from_episodes(eps), cfg)
    dbs = [build_cf_database(model, eps, None, StrategySpec(1, seed=0),
                             seed=derive_seed(0, f"db.{i}"), index=i)
           for i in range(6)]
    for a, b in itertools.combinations(dbs, 2):
        assert any(not np.array_equal(x.actions, y.actions)
                   for x, y in zip(a.episodes, b.episodes))


def test_trait_source_changes_the_rollout():
    eps = _episodes(5, 3, seed=11)
    cfg = BiCoGanConfig(hidden=16, batch_size=10, lr=1e-3, epochs=5, seed=4)
    model, _ = train_bicogan(transitions_from_episodes(eps), cfg)
    tm = TraitRegressor(D, window_size=1, hidden=8, key_dim=4, seed=6)
    a = build_cf_database(model, eps, tm, StrategySpec(1, seed=0), seed=1)
    b = build_cf_database(model, eps, tm, StrategySpec(1, seed=0), seed=1,
                          trait_source="factual")
    assert any(not np.array_equal(x.states, y.states)
               for x, y in zip(a.episodes, b.episodes))
    with pytest.raises(ValueError, match="trait_source"):
        build_cf_database(model, eps, tm, StrategySpec(1, seed=0), seed=1,
                          trait_source="both")


def test_padded_source_rejected(degenerate_fixture):
    eps, model = degenerate_fixture
    from cfdial.dataset import pad_episodes
    padded = pad_episodes(eps, 7)
    with pytest.raises(ValueError, match="padded"):
        build_cf_database(model, padded, None, StrategySpec(1, seed=0), seed=0)


def test_dimension_mismatch_rejected(degenerate_fixture):
    _, model = degenerate_fixture
    rng = np.random.default_rng(0)
    bad = Episode(id="bad", states=rng.normal(0, 1, (2, 3)),
                  actions=rng.normal(0, 1, (1, 3)), outcome=1.0)
    with pytest.raises(ValueError, match="dimension"):
        build_cf_database(model, [bad], None, StrategySpec(1, seed=0), seed=0)


# -- alignment ---------------------------------------------------------------


def test_alignment_zero_for_identical_data():
    eps = _episodes(4, 3, seed=12)
    db = CfDatabase(index=0, episodes=list(eps))
    assert alignment_error(db, eps) == 0.0


def test_alignment_matches_monte_carlo_reference():
    # both sides i.i.d. standard normal: the statistic estimates E||x - y||
    rng = np.random.default_rng(13)
    n, turns = 400, 4
    src = _episodes(n, turns, seed=14)
    fake = [Episode(id=e.id, states=rng.normal(0, 1, e.states.shape),
                    actions=e.actions, outcome=e.outcome) for e in src]
    stat = alignment_error(CfDatabase(index=0, episodes=fake), src)
    mc = np.linalg.norm(rng.normal(0, 1, (200_000, D)) - rng.normal(0, 1, (200_000, D)),
                        axis=1).mean()
    assert abs(stat - mc) < 0.1


def test_alignment_requires_matching_counts():
    eps = _episodes(3, 2, seed=15)
    with pytest.raises(ValueError, match="episodes"):
        alignment_error(CfDatabase(index=0, episodes=eps[:2]), eps)


# -- balanced selection ------------------------------------------------------


def _dbs(rewards):
    return [CfDatabase(index=i, episodes=[], predicted_cum_reward=float(r))
            for i, r in enumerate(rewards)]


def test_balance_nearest_first():
    kept = balance_select(_dbs([1, 2, 9, 10]), 5.0, 2)
    assert [db.predicted_cum_reward for db in kept] == [2.0, 9.0]


def test_balance_all_above_errors():
    with pytest.raises(ValueError, match="below"):
        balance_select(_dbs([6, 7, 8]), 5.0, 2)


def test_balance_identity_when_already_split():
    dbs = _dbs([1, 2, 8, 9])
    kept = balance_select(dbs, 5.0, 4)
    assert [db.index for db in kept] == [0, 1, 2, 3]


def test_balance_is_permutation_invariant():
    rng = np.random.default_rng(16)
    rewards = [3.0, 4.5, 5.5, 7.0, 2.0, 6.5]
    base = balance_select(_dbs(rewards), 5.0, 4)
    for _ in range(5):
        perm = rng.permutation(len(rewards))
        shuffled = [CfDatabase(index=int(i), episodes=[],
                               predicted_cum_reward=rewards[i]) for i in perm]
        assert [db.index for db in balance_select(shuffled, 5.0, 4)] == \
               [db.index for db in base]


def test_balance_exact_hits_sit_on_neither_side():
    kept = balance_select(_dbs([4, 5, 6]), 5.0, 2)
    assert [db.predicted_cum_reward for db in kept] == [4.0, 6.0]
    with pytest.raises(ValueError, match="above"):
        balance_select(_dbs([4, 5, 6]), 5.0, 3)


def test_balance_ties_break_by_index():
    # indices 1 and 2 sit at the same distance above; the lower index wins
    dbs = _dbs([3.0, 7.0, 7.0, 6.0])
    kept = balance_select(dbs, 5.0, 3)
    assert [db.index for db in kept] == [0, 1, 3]


def test_balance_against_brute_force_small_cases():
    rng = np.random.default_rng(17)
    for _ in range(60):
        n = int(rng.integers(2, 7))
        rewards = rng.uniform(0, 10, n)
        gt = float(rng.uniform(2, 8))
        for n_keep in range(0, n + 1):
            dbs = _dbs(rewards)
            above = sum(r > gt for r in rewards)
            below = sum(r < gt for r in rewards)
            feasible = above >= (n_keep + 1) // 2 and below >= n_keep // 2
            if not feasible:
                with pytest.raises(ValueError):
                    balance_select(dbs, gt, n_keep)
                continue
            kept = {db.index for db in balance_select(dbs, gt, n_keep)}
            best = None
            for combo in itertools.combinations(range(n), n_keep):
                ups = sum(rewards[i] > gt for i in combo)
                downs = sum(rewards[i] < gt for i in combo)
                if ups != (n_keep + 1) // 2 or downs != n_keep // 2:
                    continue
                key = (sum(abs(rewards[i] - gt) for i in combo), combo)
                if best is None or key < best:
                    best = key
            assert best is not None
            assert kept == set(best[1])


def test_balance_requires_predicted_rewards():
    dbs = _dbs([1, 9])
    dbs[1].predicted_cum_reward = None
    with pytest.raises(ValueError, match="predicted"):
        balance_select(dbs, 5.0, 1)
    with pytest.raises(ValueError, match="non-negative"):
        balance_select(_dbs([1, 9]), 5.0, -1)
