"""Combinatorial structure and recurrence conditions for multimodal interval maps."""

__version__ = "0.1.0"
