"""Semantically weighted DPO on a desk-scale prompt-rewriting testbed."""

__version__ = "0.1.0"
