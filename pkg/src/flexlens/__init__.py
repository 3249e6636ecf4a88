"""Curtailment detection and marginal-emissions accounting for flexible facility loads."""

__version__ = "0.1.0"
