"""Pose data, autodiff engine, models, training and evaluation."""
