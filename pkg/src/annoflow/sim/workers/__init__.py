"""Bundled worker scripts; run as standalone processes, not imported."""
