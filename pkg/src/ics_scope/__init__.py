"""Toolkit for finding, sanitizing and classifying industrial-control-system
traffic in sampled, truncated packet captures, plus a synthetic corpus
generator that serves as ground truth for every pipeline stage."""

__version__ = "0.1.0"
