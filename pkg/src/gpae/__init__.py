"""Autoencoders built from genetic-programming expression trees."""

__version__ = "0.1.0"
