"""LTE downlink cell scanner and drive-test analytics."""

__version__ = "0.1.0"
