"""Unsupervised domain adaptation for re-identification on synthetic benchmarks."""

__version__ = "0.1.0"
