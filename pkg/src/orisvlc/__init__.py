"""Visible-light communication simulator with mirror-based ORIS and angle diversity receivers."""

__version__ = "0.1.0"
