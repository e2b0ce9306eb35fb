"""Bundled dataset descriptors."""
