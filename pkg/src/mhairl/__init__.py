"""Multi-task hierarchical adversarial inverse RL on tabular worlds."""

__version__ = "0.1.0"
