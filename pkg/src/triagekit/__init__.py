"""Convolutional text models for depression detection and self-harm risk triage."""

__version__ = "0.1.0"
