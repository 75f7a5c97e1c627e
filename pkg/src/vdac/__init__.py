"""Multi-agent actor-critic training with decomposed state-value critics."""

__version__ = "0.1.0"
