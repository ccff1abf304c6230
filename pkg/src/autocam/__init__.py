"""Noise-aware image information metric and joint exposure/gain control."""

__version__ = "0.1.0"
