"""Toolkit for turning 3GPP change requests into datasets and running the evaluation loop."""

__version__ = "0.1.0"
