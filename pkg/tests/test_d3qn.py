"""Dueling double-DQN: scoring, targets, rollout training, and the tabular adapter."""

import json

import numpy as np
import pytest

from cfdial.counterfactual import CfDatabase
from cfdial.d3qn import (DiscreteMdp, DuelingQNet, PolicyConfig, dueling_combine,
                         evaluate_policy, q_value, read_q_stats, select_action,
                         td_target, train_policy, train_policy_mdp,
                         value_iteration, write_q_stats)
from cfdial.dataset import Episode
from cfdial.reward import RewardModel

D = 2


def _databases(n_db=3, n_dialogues=3, n_turns=2, seed=0):
    rng = np.random.default_rng(seed)
    dbs = []
    for i in range(n_db):
        eps = []
        for j in range(n_dialogues):
            states = rng.normal(0, 1, (n_turns + 1, D))
            actions = rng.normal(0, 1, (n_turns, D))
            eps.append(Episode(id=f"cf{i}-{j}", states=states, actions=actions,
                               outcome=0.0, source="counterfactual", db_index=i))
        dbs.append(CfDatabase(index=i, episodes=eps, strategy_variant=1))
    return dbs


# -- dueling decomposition ----------------------------------------------------


def test_dueling_combine_hand_case():
    assert np.array_equal(dueling_combine(5.0, [1.0, 3.0]), [4.0, 6.0])


def test_constant_advantage_shift_cancels():
    q = dueling_combine(2.0, [1.0, 3.0, 8.0])
    assert np.array_equal(dueling_combine(2.0, [1.0 + 16, 3.0 + 16, 8.0 + 16]), q)


def test_single_candidate_q_equals_value():
    assert np.array_equal(dueling_combine(7.25, [123.0]), [7.25])


def test_empty_candidate_set_rejected():
    net = DuelingQNet(D, 8, seed=0)
    with pytest.raises(ValueError, match="empty candidate"):
        dueling_combine(1.0, [])
    with pytest.raises(ValueError, match="empty candidate"):
        net.q_candidates(np.zeros(D), np.zeros((0, D)))
    with pytest.raises(ValueError, match="empty candidate"):
        q_value(net, np.zeros(D), np.zeros(D), np.zeros((0, D)))


def test_q_value_matches_candidate_scores():
    net = DuelingQNet(D, 16, seed=1)
    rng = np.random.default_rng(2)
    s = rng.normal(0, 1, D)
    cands = rng.normal(0, 1, (4, D))
    q = net.q_candidates(s, cands)
    for k in range(4):
        assert q_value(net, s, cands[k], cands) == pytest.approx(q[k], rel=1e-9)


def test_training_path_matches_inference_path():
    net = DuelingQNet(D, 16, seed=3)
    rng = np.random.default_rng(4)
    s = rng.normal(0, 1, D)
    cands = rng.normal(0, 1, (5, D))
    q = net.q_candidates(s, cands)
    for k in range(5):
        assert net.q_pred(s, k, cands).data[0, 0] == pytest.approx(q[k], rel=1e-9)


def test_greedy_selection_breaks_ties_low():
    net = DuelingQNet(D, 8, seed=5)
    a = np.array([0.4, -0.2])
    k, picked = select_action(net, np.zeros(D), np.stack([a, a, a]))
    assert k == 0
    q = net.q_candidates(np.zeros(D), np.stack([a, a, -a]))
    k2, picked2 = select_action(net, np.zeros(D), np.stack([a, a, -a]))
    assert k2 == int(np.argmax(q))
    picked2[:] = 99.0       # caller owns the returned action
    assert np.array_equal(net.q_candidates(np.zeros(D), np.stack([a, a, -a])), q)


# -- targets ------------------------------------------------------------------


def test_terminal_target_is_the_bare_reward():
    net = DuelingQNet(D, 8, seed=0)
    assert td_target(net, 7.5, None, None, 0.99, terminal=True) == 7.5


def test_zero_discount_target_is_the_reward():
    net = DuelingQNet(D, 8, seed=0)
    cands = np.random.default_rng(0).normal(0, 1, (3, D))
    assert td_target(net, 2.0, np.zeros(D), cands, 0.0) == 2.0


def test_target_arithmetic_with_flattened_target_net():
    net = DuelingQNet(D, 8, seed=1)
    net.target_params["adv.W"].data[...] = 0.0
    net.target_params["adv.b"].data[...] = 0.0
    net.target_params["val.W"].data[...] = 0.0
    net.target_params["val.b"].data[...] = 2.0
    cands = np.random.default_rng(1).normal(0, 1, (4, D))
    assert td_target(net, 0.0, np.ones(D), cands, 0.9) == 0.9 * 2.0


def test_live_copy_chooses_frozen_copy_prices():
    net = DuelingQNet(D, 16, seed=2)
    net.target_params["adv.W"].data[...] *= -1.0   # force the copies to disagree
    s = np.array([0.3, -0.6])
    cands = np.random.default_rng(3).normal(0, 1, (4, D))
    q_main = net.q_candidates(s, cands, which="main")
    q_tgt = net.q_candidates(s, cands, which="target")
    assert int(np.argmax(q_main)) != int(np.argmax(q_tgt))
    expected = 1.0 + 0.8 * q_tgt[int(np.argmax(q_main))]
    assert td_target(net, 1.0, s, cands, 0.8) == expected


def test_sync_restores_agreement():
    net = DuelingQNet(D, 8, seed=4)
    net.target_params["val.b"].data[...] = 50.0
    s, cands = np.zeros(D), np.eye(2)
    assert not np.array_equal(net.q_candidates(s, cands, "target"),
                              net.q_candidates(s, cands, "main"))
    net.sync()
    assert np.array_equal(net.q_candidates(s, cands, "target"),
                          net.q_candidates(s, cands, "main"))


# -- rollout training ---------------------------------------------------------


def _reward_model():
    return RewardModel(D, hidden=8, seed=0)


def test_zero_epochs_is_a_no_op():
    dbs = _databases()
    net = DuelingQNet(D, 8, seed=0)
    before = {n: t.data.copy() for n, t in net.params.items()}
    net, losses = train_policy(net, dbs, _reward_model(),
                               PolicyConfig(hidden=8, epochs=0, seed=0))
    assert losses == []
    assert all(np.array_equal(net.params[n].data, v) for n, v in before.items())


def test_training_is_seed_deterministic():
    dbs = _databases()

    def run():
        net = DuelingQNet(D, 8, seed=1)
        cfg = PolicyConfig(hidden=8, batch_size=4, epochs=3, eps_start=0.4, seed=6)
        return train_policy(net, dbs, _reward_model(), cfg)

    net_a, losses_a = run()
    net_b, losses_b = run()
    assert losses_a == losses_b
    assert len(losses_a) == 3 * 3          # epochs * dialogues
    s, cands = np.zeros(D), np.eye(2)
    assert np.array_equal(net_a.q_candidates(s, cands), net_b.q_candidates(s, cands))


def test_mismatched_databases_rejected():
    net = DuelingQNet(D, 8, seed=0)
    rm = _reward_model()
    cfg = PolicyConfig(hidden=8, epochs=1)
    with pytest.raises(ValueError, match="no counterfactual databases"):
        train_policy(net, [], rm, cfg)
    dbs = _databases()
    dbs[1] = CfDatabase(index=1, episodes=dbs[1].episodes[:2], strategy_variant=1)
    with pytest.raises(ValueError, match="dialogues"):
        train_policy(net, dbs, rm, cfg)
    dbs = _databases()
    short = dbs[2].episodes[0]
    dbs[2].episodes[0] = Episode(id=short.id, states=short.states[:2],
                                 actions=short.actions[:1], outcome=0.0,
                                 source="counterfactual")
    with pytest.raises(ValueError, match="disagree on length"):
        train_policy(net, dbs, rm, cfg)


def test_evaluation_is_greedy_and_deterministic():
    dbs = _databases()
    net = DuelingQNet(D, 8, seed=2)
    rm = _reward_model()
    stats = evaluate_policy(net, dbs, rm)
    again = evaluate_policy(net, dbs, rm)
    assert np.array_equal(stats["cumulative"], again["cumulative"])
    assert len(stats["episodes"]) == 3
    assert np.all(np.diff(stats["cumulative"]) >= 0)   # scores are capped at zero below

    ep = stats["episodes"][0]
    s = dbs[0].episodes[0].states[0]
    for t in range(2):
        cands = np.stack([db.episodes[0].actions[t] for db in dbs])
        k, action = select_action(net, s, cands)
        assert np.array_equal(ep.actions[t], action)
        s = dbs[k].episodes[0].states[t + 1]


def test_flat_network_makes_max_equal_mean():
    dbs = _databases()
    net = DuelingQNet(D, 8, seed=3)
    for name in ("adv.W", "adv.b", "val.W"):
        net.params[name].data[...] = 0.0
    net.params["val.b"].data[...] = 1.25
    net.sync()
    stats = evaluate_policy(net, dbs, _reward_model())
    assert np.array_equal(stats["max_q"], stats["mean_q"])
    assert np.all(stats["max_q"] == 1.25)


def test_q_stats_file_round_trip(tmp_path):
    stats = {"cumulative": np.array([0.1, 0.30000000000000004, 1.7]),
             "max_q": np.array([3.0, -2.5, 0.0]),
             "mean_q": np.array([1e-17, 2.0, -0.75])}
    path = tmp_path / "q.tsv"
    write_q_stats(path, stats)
    back = read_q_stats(path)
    for key in ("cumulative", "max_q", "mean_q"):
        assert np.array_equal(back[key], stats[key])
    (tmp_path / "bad.tsv").write_text("nope\n")
    with pytest.raises(ValueError, match="q-stats"):
        read_q_stats(tmp_path / "bad.tsv")


def test_save_load_preserves_both_copies(tmp_path):
    net = DuelingQNet(D, 8, seed=7)
    net.target_params["val.b"].data[...] = -3.0    # deliberately desynced
    stem = tmp_path / "net"
    net.save(stem)
    loaded = DuelingQNet.load(stem)
    s, cands = np.ones(D), np.eye(2)
    assert np.array_equal(loaded.q_candidates(s, cands, "main"),
                          net.q_candidates(s, cands, "main"))
    assert np.array_equal(loaded.q_candidates(s, cands, "target"),
                          net.q_candidates(s, cands, "target"))
    meta_path = stem.with_suffix(".meta.json")
    meta = json.loads(meta_path.read_text())
    meta["kind"] = "transition-gan"
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(ValueError, match="dueling-qnet"):
        DuelingQNet.load(stem)


# -- tabular adapter ----------------------------------------------------------


def _two_state_mdp():
    return DiscreteMdp(n_states=2, n_actions=2,
                       next_state=np.array([[0, 1], [1, 1]]),
                       rewards=np.array([[0.0, 1.0], [0.0, 0.0]]),
                       terminal=frozenset({1}))


def test_mdp_validation():
    with pytest.raises(ValueError, match=r"\(S, A\)"):
        DiscreteMdp(2, 2, next_state=np.zeros((2, 3), dtype=int),
                    rewards=np.zeros((2, 3)))
    with pytest.raises(ValueError, match="out of range"):
        DiscreteMdp(2, 2, next_state=np.array([[0, 5], [0, 0]]),
                    rewards=np.zeros((2, 2)))


def test_value_iteration_hand_solvable_chain():
    # Q(0, stay) = 0 + 0.5 V(0) with V(0) = 1, Q(0, go) = 1; state 1 is terminal
    qstar = value_iteration(_two_state_mdp(), gamma=0.5)
    assert np.allclose(qstar, [[0.5, 1.0], [0.0, 0.0]], atol=1e-9)


def test_adapter_rejects_wrong_embedding_width():
    net = DuelingQNet(5, 8, seed=0)
    with pytest.raises(ValueError, match="embedding"):
        train_policy_mdp(net, _two_state_mdp(), PolicyConfig(hidden=8, epochs=1))


@pytest.mark.parametrize("case", [1, 2])
def test_learned_q_matches_value_iteration(case):
    mdp = _two_state_mdp()
    qstar = value_iteration(mdp, gamma=0.5)
    net = DuelingQNet(mdp.embed_dim, 16, seed=0)
    cfg = PolicyConfig(hidden=16, batch_size=8, lr=5e-3, epochs=30, gamma=0.5,
                       case=case, eps_start=0.5, eps_end=0.2, sync_every=10, seed=0)
    net, losses = train_policy_mdp(net, mdp, cfg, rollouts_per_epoch=10, horizon=10)
    learned = net.q_candidates(mdp.state_vec(0), mdp.action_matrix())
    assert np.abs(learned - qstar[0]).max() < 0.01
    assert int(np.argmax(learned)) == int(np.argmax(qstar[0]))
    assert np.mean(losses[-20:]) < np.mean(losses[:20])
