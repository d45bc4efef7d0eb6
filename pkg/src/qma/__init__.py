"""Quaternionic Monge-Ampère solver on flat hyperKähler tori."""

__version__ = "0.1.0"
