"""Model-based RL with an outer trainer that tunes the training process online."""

__version__ = "0.1.0"
