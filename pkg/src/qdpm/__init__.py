"""qdpm: a simulation lab for model-free dynamic power management.

A tabular Q-learning power manager drives the power modes of a modeled
device under synthetic workloads and is scored against the exact optimal
policy from value iteration on the fully-known MDP, in both stationary and
regime-switching settings.
"""

__version__ = "0.1.0"
