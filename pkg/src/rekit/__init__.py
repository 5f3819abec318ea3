"""Radio environment knowledge toolkit."""

__version__ = "0.1.0"
