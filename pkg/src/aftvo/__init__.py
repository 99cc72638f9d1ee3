"""Asynchronous multi-sensor pose fusion with a mixture-density front end and a transformer."""

__version__ = "0.1.0"
