"""Desk-scale laboratory for pre-training, initialization and distribution-shift robustness."""

__version__ = "0.1.0"
