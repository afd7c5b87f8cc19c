"""Stdio worker exposing pluggable learners to the evaluation harness."""

__version__ = "0.1.0"
