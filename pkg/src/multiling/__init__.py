"""Compact multilingual encoder pre-training with adversarial and distillation objectives."""

__version__ = "0.1.0"
