"""
Command-line interface: ``markov-loc <subcommand>``.
"""

from cli.main import build_parser, main

__all__ = ["build_parser", "main"]
