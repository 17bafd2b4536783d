"""Intent-to-device filtering policy refinement toolkit."""

__version__ = "0.1.0"
