"""Test suite for the structural basis distiller."""
