"""
CLI Package
Typer application exposing the pipeline stages as subcommands.
"""

from src.cli.main import app

__all__ = ['app']
