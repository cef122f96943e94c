#!/usr/bin/env python3
"""Command-line entry point for the structural basis distiller."""

from src.basis_distiller.cli import main

if __name__ == "__main__":
    main()
