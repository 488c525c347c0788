"""Spatial-temporal transformer for dynamic scene graph generation."""
