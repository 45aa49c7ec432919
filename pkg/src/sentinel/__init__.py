"""Cyber Sentinel: a conversational security-operations agent."""

__version__ = "0.1.0"
