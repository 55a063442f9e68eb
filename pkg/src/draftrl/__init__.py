"""Multi-agent draft generation, peer evaluation and reward-aligned RL on a
synthetic chain-arithmetic task."""

__version__ = "0.1.0"
