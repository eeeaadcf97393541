"""Optimal liquidation across a lit limit order book and a dark pool."""

__version__ = "0.1.0"
