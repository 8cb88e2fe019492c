"""Defensive pass interference prediction from player-tracking data."""

__version__ = "0.1.0"
