"""Synthesis of (question, SQL query) training pairs for text-to-SQL parsers."""

__version__ = "0.1.0"
