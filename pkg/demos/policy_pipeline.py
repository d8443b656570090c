"""Run the whole pipeline end to end on a small world and read the artifacts.

Same thing the `cfdial all` subcommand does, driven from Python: generate a
corpus, estimate traits, learn the transition model, build counterfactual
databases, train the reward model and the policy, evaluate, and bundle a
report.  Every stage writes a manifest with config and content hashes, so a
finished run directory is self-describing.
"""

import json
import tempfile
from pathlib import Path

from cfdial.cli import main

# desk-sized run; the balance filter stays off because drift dominates the
# database spread at this scale (the full-size configs turn it on)
CONFIG = """\
seed: 5
n_dialogues: 60
split_ratio: 0.8
world: {d: 4, T: 5, noise_scale: 0.05, action_gain: 2.0}
dppr: {hidden: 32, key_dim: 8, batch_size: 32, lr: 0.001, epochs: 15, window_size: 1}
bicogan: {hidden: 48, batch_size: 48, lr: 0.001, epochs: 60, non_saturating: true, reg_weight: 5.0}
cf: {n_databases: 8, strategy: 2, balance_keep: null}
reward: {hidden: 32, batch_size: 16, lr: 0.003, epochs: 60}
policy: {hidden: 32, batch_size: 16, lr: 0.001, epochs: 3}
"""

with tempfile.TemporaryDirectory() as tmp:
    cfg = Path(tmp) / "small.yaml"
    cfg.write_text(CONFIG)
    out = Path(tmp) / "run"
    rc = main(["all", "--config", str(cfg), "--out", str(out)])
    assert rc == 0, f"pipeline exited {rc}"

    balance = json.loads((out / "policy" / "balance.json").read_text())
    gt = balance["ground_truth"]
    print(f"reference cumulative reward (factual corpus): {gt:.2f}")
    for idx, pred in sorted(balance["predicted"].items(), key=lambda kv: int(kv[0])):
        side = "above" if pred > gt else "below"
        print(f"  database {idx}: {pred:8.2f}  {side}")
    print(f"kept for policy training: {len(balance['kept'])} of "
          f"{len(balance['predicted'])} databases")

    rows = (out / "evaluate" / "cumulative.tsv").read_text().strip().splitlines()
    learned, behavior = map(float, rows[-1].split("\t")[1:3])
    print(f"cumulative predicted reward: learned policy {learned:.2f} "
          f"vs behavior {behavior:.2f}")

    prov = json.loads((out / "provenance.json").read_text())
    print(f"run covers stages: {', '.join(sorted(prov['stages']))}")
