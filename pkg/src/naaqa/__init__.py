"""Acoustic question answering workbench: CLEAR2-style data generation and NAAQA models."""

__version__ = "0.1.0"
