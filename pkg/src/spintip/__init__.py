"""Multispin thermal model of an attention head: tipping points and cluster growth."""

__version__ = "0.1.0"
