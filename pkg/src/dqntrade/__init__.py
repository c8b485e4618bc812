"""Deep Q-network trading toolkit: simulators, features, a hand-written dueling
Q-network, prioritized replay, walk-forward backtests and performance metrics."""

__version__ = "0.1.0"
