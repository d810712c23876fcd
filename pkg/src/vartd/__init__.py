"""Policy evaluation of the value, second moment and variance of the reward-to-go."""

__version__ = "0.1.0"
