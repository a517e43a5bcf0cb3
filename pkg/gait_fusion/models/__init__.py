"""Data models for pose sequences, features, reports and checkpoints."""
