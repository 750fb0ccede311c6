"""Desk-scale multilingual NMT laboratory with train-infer-train zero-shot self-learning."""

__version__ = "0.1.0"
