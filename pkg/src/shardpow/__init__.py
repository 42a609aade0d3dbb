"""Sharded proof-of-work: merged mining across a beacon chain and shard chains."""

__version__ = "0.1.0"
