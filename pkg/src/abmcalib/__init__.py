"""Flood-abandonment ABM calibration."""
