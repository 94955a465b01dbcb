"""Waypoint-goal navigation from egomotion pose logs."""

__version__ = "0.1.0"
