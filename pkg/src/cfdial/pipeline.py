"""Staged experiment pipeline over one run directory.

Each stage owns a subdirectory, validates that its upstream artifacts
exist, and finishes by writing a manifest recording its derived seed, its
section config, and a checksum of every file it read or wrote.  A stage
whose manifest exists is complete and will not be overwritten.  The
report stage re-hashes everything the manifests mention, so a run whose
artifacts were edited after the fact refuses to assemble.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .bicogan import TransitionGan, consistency_errors, train_bicogan, transitions_from_episodes
from .config import ExperimentConfig, to_tree
from .counterfactual import CfDatabase, StrategySpec, alignment_error, balance_select, build_cf_database
from .d3qn import DuelingQNet, evaluate_policy, train_policy, write_q_stats
from .dataset import filter_by_outcome, load_episodes, save_episodes, split, window_turns
from .dppr import TraitRegressor, regression_metrics, train_dppr, windows_to_arrays
from .reward import RewardModel, cumulative_rewards, train_reward
from .seeding import derive_seed


class StageError(RuntimeError):
    """A stage could not run: missing upstream artifacts or state conflicts."""


STAGES = ("gen-world", "train-dppr", "train-bicogan", "gen-cf",
          "train-reward", "train-policy", "evaluate", "report")


def _stage_dirname(stage: str) -> str:
    return {"gen-world": "world", "train-dppr": "dppr", "train-bicogan": "bicogan",
            "gen-cf": "cf", "train-reward": "reward", "train-policy": "policy",
            "evaluate": "evaluate", "report": "report"}[stage]


def _require(run_dir: Path, rel: str, hint: str) -> Path:
    path = run_dir / rel
    if not path.exists():
        raise StageError(f"missing {rel}: this stage requires {hint}")
    return path


def _manifest_path(run_dir: Path, stage: str) -> Path:
    return run_dir / _stage_dirname(stage) / "manifest.json"


def _begin(run_dir: Path, stage: str) -> Path:
    stage_dir = run_dir / _stage_dirname(stage)
    if _manifest_path(run_dir, stage).exists():
        raise StageError(f"stage {stage} is already complete in {stage_dir}; "
                         "stages are immutable, use a fresh --out")
    stage_dir.mkdir(parents=True, exist_ok=True)
    return stage_dir


def _finish(run_dir: Path, stage: str, cfg: ExperimentConfig,
            inputs: list[Path], outputs: list[Path]) -> None:
    def table(paths):
        return {str(p.relative_to(run_dir)): metrics_mod.sha256_file(p)
                for p in sorted(set(paths))}
    manifest = {"stage": stage,
                "seed": cfg.stage_seed(_stage_dirname(stage)),
                "config": to_tree(cfg),
                "inputs": table(inputs),
                "outputs": table(outputs)}
    _manifest_path(run_dir, stage).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_tsv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


# -- stages -------------------------------------------------------------------


def gen_world(cfg: ExperimentConfig, run_dir: Path) -> None:
    from .synthworld import generate_dataset
    stage_dir = _begin(run_dir, "gen-world")
    scm, _, episodes = generate_dataset(cfg.world, cfg.n_dialogues)
    train, test = split(episodes, cfg.split_ratio, cfg.stage_seed("split"))
    outs = []
    for name, eps in (("episodes", episodes), ("train", train), ("test", test)):
        path = stage_dir / f"{name}.jsonl"
        save_episodes(eps, path, cfg.world.d, cfg.world.T)
        outs.append(path)
    _finish(run_dir, "gen-world", cfg, [], outs)


def train_dppr_stage(cfg: ExperimentConfig, run_dir: Path) -> None:
    train_path = _require(run_dir, "world/train.jsonl", "the gen-world stage")
    test_path = _require(run_dir, "world/test.jsonl", "the gen-world stage")
    stage_dir = _begin(run_dir, "train-dppr")
    train_eps, _ = load_episodes(train_path)
    test_eps, _ = load_episodes(test_path)
    model, history = train_dppr(window_turns(train_eps, cfg.dppr.window_size), cfg.dppr)
    X, Y = windows_to_arrays(window_turns(test_eps, cfg.dppr.window_size))
    scores = regression_metrics(model.predict(X), Y)
    model.save(stage_dir / "trait")
    _write_tsv(stage_dir / "regression.tsv", ["metric", "value"],
               [[k, float(scores[k])] for k in sorted(scores)])
    _write_tsv(stage_dir / "history.tsv", ["epoch", "train_mse"],
               [[i, float(v)] for i, v in enumerate(history)])
    outs = [stage_dir / "regression.tsv", stage_dir / "history.tsv"]
    outs += sorted(stage_dir.glob("trait.*"))
    _finish(run_dir, "train-dppr", cfg, [train_path, test_path], outs)


def _load_trait_model(run_dir: Path) -> tuple[TraitRegressor, list[Path]]:
    _require(run_dir, "dppr/trait.meta.json", "the train-dppr stage")
    model = TraitRegressor.load(run_dir / "dppr" / "trait")
    return model, sorted((run_dir / "dppr").glob("trait.*"))


def train_bicogan_stage(cfg: ExperimentConfig, run_dir: Path) -> None:
    train_path = _require(run_dir, "world/train.jsonl", "the gen-world stage")
    test_path = _require(run_dir, "world/test.jsonl", "the gen-world stage")
    trait_model, trait_files = _load_trait_model(run_dir)
    stage_dir = _begin(run_dir, "train-bicogan")
    train_eps, _ = load_episodes(train_path)
    test_eps, _ = load_episodes(test_path)
    model, _ = train_bicogan(transitions_from_episodes(train_eps, trait_model),
                             cfg.bicogan)
    errs = consistency_errors(model, transitions_from_episodes(test_eps, trait_model))
    model.save(stage_dir / "gan")
    _write_tsv(stage_dir / "consistency.tsv",
               ["n", "mean_error", "tolerance", "pass_rate"],
               [[errs.size, float(errs.mean()), float(model.consistency_tol),
                 float((errs <= model.consistency_tol).mean())]])
    outs = [stage_dir / "consistency.tsv"] + sorted(stage_dir.glob("gan.*"))
    _finish(run_dir, "train-bicogan", cfg,
            [train_path, test_path, *trait_files], outs)


def gen_cf_stage(cfg: ExperimentConfig, run_dir: Path) -> None:
    train_path = _require(run_dir, "world/train.jsonl", "the gen-world stage")
    _require(run_dir, "bicogan/gan.meta.json", "the train-bicogan stage")
    trait_model, trait_files = _load_trait_model(run_dir)
    stage_dir = _begin(run_dir, "gen-cf")
    train_eps, _ = load_episodes(train_path)
    gan = TransitionGan.load(run_dir / "bicogan" / "gan")
    outs, rows = [], []
    for i in range(cfg.cf.n_databases):
        db_seed = derive_seed(cfg.cf.seed, f"db.{i}")
        db = build_cf_database(gan, train_eps, trait_model,
                               StrategySpec(cfg.cf.strategy, seed=db_seed),
                               seed=db_seed, index=i,
                               noise_mode=cfg.cf.noise_mode,
                               trait_source=cfg.cf.trait_source,
                               replace=cfg.cf.replace)
        path = stage_dir / f"db{i:03d}.jsonl"
        save_episodes(db.episodes, path, cfg.world.d, cfg.world.T)
        outs.append(path)
        rows.append([i, float(alignment_error(db, train_eps))])
    _write_tsv(stage_dir / "alignment.tsv", ["db", "alignment"], rows)
    outs.append(stage_dir / "alignment.tsv")
    gan_files = sorted((run_dir / "bicogan").glob("gan.*"))
    _finish(run_dir, "gen-cf", cfg, [train_path, *gan_files, *trait_files], outs)


def load_databases(run_dir: Path, strategy: int) -> list[CfDatabase]:
    paths = sorted((run_dir / "cf").glob("db*.jsonl"))
    dbs = []
    for i, path in enumerate(paths):
        episodes, _ = load_episodes(path)
        dbs.append(CfDatabase(index=i, episodes=episodes, strategy_variant=strategy))
    return dbs


def train_reward_stage(cfg: ExperimentConfig, run_dir: Path) -> None:
    train_path = _require(run_dir, "world/train.jsonl", "the gen-world stage")
    stage_dir = _begin(run_dir, "train-reward")
    train_eps, _ = load_episodes(train_path)
    kept = filter_by_outcome(train_eps, cfg.outcome_cap)
    model, history = train_reward(kept, cfg.reward)
    model.save(stage_dir / "reward")
    _write_tsv(stage_dir / "history.tsv", ["epoch", "train_mse", "val_mse"],
               [[i, float(t), float(v)] for i, (t, v)
                in enumerate(zip(history["train_mse"], history["val_mse"]))])
    outs = [stage_dir / "history.tsv"] + sorted(stage_dir.glob("reward.*"))
    _finish(run_dir, "train-reward", cfg, [train_path], outs)


def train_policy_stage(cfg: ExperimentConfig, run_dir: Path) -> None:
    if not sorted((run_dir / "cf").glob("db*.jsonl")):
        raise StageError("requires counterfactual databases: run gen-cf first")
    train_path = _require(run_dir, "world/train.jsonl", "the gen-world stage")
    _require(run_dir, "reward/reward.meta.json", "the train-reward stage")
    stage_dir = _begin(run_dir, "train-policy")
    train_eps, _ = load_episodes(train_path)
    reward_model = RewardModel.load(run_dir / "reward" / "reward")
    databases = load_databases(run_dir, cfg.cf.strategy)
    for db in databases:
        db.predicted_cum_reward = float(cumulative_rewards(reward_model, db.episodes)[-1])
    ground_truth = float(cumulative_rewards(reward_model, train_eps)[-1])
    if cfg.cf.balance_keep is not None:
        kept = balance_select(databases, ground_truth, cfg.cf.balance_keep)
    else:
        kept = databases
    net = DuelingQNet(cfg.world.d, cfg.policy.hidden, cfg.policy.seed)
    net, losses = train_policy(net, kept, reward_model, cfg.policy)
    net.save(stage_dir / "qnet")
    _write_tsv(stage_dir / "losses.tsv", ["dialogue", "loss"],
               [[i, float(v)] for i, v in enumerate(losses)])
    selection = {"ground_truth": ground_truth,
                 "predicted": {str(db.index): db.predicted_cum_reward
                               for db in databases},
                 "kept": [db.index for db in kept]}
    (stage_dir / "balance.json").write_text(
        json.dumps(selection, indent=2, sort_keys=True) + "\n")
    outs = [stage_dir / "losses.tsv", stage_dir / "balance.json"]
    outs += sorted(stage_dir.glob("qnet.*"))
    ins = [train_path, *sorted((run_dir / "cf").glob("db*.jsonl")),
           *sorted((run_dir / "reward").glob("reward.*"))]
    _finish(run_dir, "train-policy", cfg, ins, outs)


def evaluate_stage(cfg: ExperimentConfig, run_dir: Path) -> None:
    train_path = _require(run_dir, "world/train.jsonl", "the gen-world stage")
    test_path = _require(run_dir, "world/test.jsonl", "the gen-world stage")
    _require(run_dir, "policy/qnet.meta.json", "the train-policy stage")
    _require(run_dir, "reward/reward.meta.json", "the train-reward stage")
    balance_path = _require(run_dir, "policy/balance.json", "the train-policy stage")
    stage_dir = _begin(run_dir, "evaluate")
    train_eps, _ = load_episodes(train_path)
    test_eps, _ = load_episodes(test_path)
    reward_model = RewardModel.load(run_dir / "reward" / "reward")
    net = DuelingQNet.load(run_dir / "policy" / "qnet")
    kept_idx = set(json.loads(balance_path.read_text())["kept"])
    databases = [db for db in load_databases(run_dir, cfg.cf.strategy)
                 if db.index in kept_idx]
    stats = evaluate_policy(net, databases, reward_model)
    behavior = cumulative_rewards(reward_model, train_eps)
    _write_tsv(stage_dir / "cumulative.tsv", ["index", "learned", "behavior"],
               [[i, float(stats["cumulative"][i]), float(behavior[i])]
                for i in range(len(behavior))])
    write_q_stats(stage_dir / "qstats.tsv", stats)
    windows = window_turns(test_eps, 1)
    X = np.stack([w.vectors.reshape(-1) for w in windows])
    Y = np.stack([w.target for w in windows])
    corr = metrics_mod.cca_trait_correlations(X, Y, cfg.evaluate.cca_components)
    _write_tsv(stage_dir / "cca.tsv", ["component", "correlation"],
               [[i, float(c)] for i, c in enumerate(corr)])
    outs = [stage_dir / "cumulative.tsv", stage_dir / "qstats.tsv",
            stage_dir / "cca.tsv"]
    ins = [train_path, test_path, balance_path,
           *sorted((run_dir / "policy").glob("qnet.*")),
           *sorted((run_dir / "reward").glob("reward.*")),
           *sorted((run_dir / "cf").glob("db*.jsonl"))]
    _finish(run_dir, "evaluate", cfg, ins, outs)


def report_stage(cfg: ExperimentConfig, run_dir: Path) -> None:
    stage_dir = _begin(run_dir, "report")
    provenance = {"seed": cfg.seed, "config": to_tree(cfg), "stages": {}}
    for stage in STAGES[:-1]:
        mpath = _manifest_path(run_dir, stage)
        if not mpath.exists():
            continue
        manifest = json.loads(mpath.read_text())
        for rel, recorded in {**manifest["inputs"], **manifest["outputs"]}.items():
            if metrics_mod.sha256_file(run_dir / rel) != recorded:
                raise StageError(f"{rel} changed after stage {stage} used it "
                                 "(checksum mismatch); refusing to mix artifacts")
        provenance["stages"][stage] = manifest
    (run_dir / "provenance.json").write_text(
        json.dumps(provenance, indent=2, sort_keys=True) + "\n")
    bundle_dir = stage_dir / "bundle"
    manifest = metrics_mod.assemble_report(run_dir, bundle_dir)
    outs = [bundle_dir / entry["file"] for entry in manifest["sections"].values()]
    outs.append(bundle_dir / "manifest.json")
    _finish(run_dir, "report", cfg, [run_dir / "provenance.json"], outs)


_STAGE_FUNCS = {
    "gen-world": gen_world,
    "train-dppr": train_dppr_stage,
    "train-bicogan": train_bicogan_stage,
    "gen-cf": gen_cf_stage,
    "train-reward": train_reward_stage,
    "train-policy": train_policy_stage,
    "evaluate": evaluate_stage,
    "report": report_stage,
}


def run_stage(name: str, cfg: ExperimentConfig, run_dir) -> None:
    if name not in _STAGE_FUNCS:
        raise StageError(f"unknown stage {name!r}; choose from {', '.join(STAGES)}")
    _STAGE_FUNCS[name](cfg, Path(run_dir))


def run_all(cfg: ExperimentConfig, run_dir) -> None:
    for name in STAGES:
        run_stage(name, cfg, run_dir)
