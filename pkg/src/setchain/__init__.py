"""Byzantine-tolerant grow-only set with epoch barriers, simulated deterministically."""

__version__ = "0.1.0"
