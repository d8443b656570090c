"""Counterfactual dialogue-policy laboratory.

A numpy research stack that learns a dialogue transition model
adversarially, rewrites recorded conversations under alternative actions,
and trains a dueling double-DQN on the rewritten data, all checked
against a synthetic world whose true causal dynamics are known.
"""

__version__ = "0.1.0"
