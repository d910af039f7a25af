"""Socially aware spatiotemporal tubes for multi-agent reach-avoid-stay tasks."""
__version__ = "0.1.0"
