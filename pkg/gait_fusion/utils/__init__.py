"""Logging, JSON and seeding helpers."""
