"""Guider-network sequence generation.

An LSTM generator whose next-token distribution is modulated by a guider
network's predicted future prefix features.  Training is MLE pretraining
followed by policy-gradient fine-tuning with feature-matching intermediate
rewards: adversarial for unconditional generation, metric-rewarded
self-critical for conditional generation.
"""

__version__ = "0.1.0"
