"""Actor-critic online data mixing at desk scale."""

__version__ = "0.1.0"
