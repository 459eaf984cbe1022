"""Topology-aware vessel segmentation training and stenosis localization.

The package generates synthetic angiogram-like cases, trains a small
per-pixel segmentation policy in three stages (supervised Dice, preference
alignment over connectivity, hard-sample fine-tuning), and trains a PPO
navigation agent with an explicit Reject action that filters geometric
stenosis candidates. Everything is pure numpy and deterministic per seed.
"""

__version__ = "0.1.0"
