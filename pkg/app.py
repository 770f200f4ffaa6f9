"""
lesiontag Application
Entry point for the command-line pipeline: python app.py <subcommand> [options].
"""

import sys
import os

# Add the repository root to the path for imports
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.cli.main import app


def main():
    """Main application entry point."""
    app()


if __name__ == "__main__":
    main()
