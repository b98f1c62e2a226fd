"""Marked temporal point processes for on-chain AMM event streams."""

__version__ = "0.1.0"
