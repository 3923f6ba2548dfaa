"""Fuzzing, fault localization and patching for mini-P4 programs."""

__version__ = "0.1.0"
