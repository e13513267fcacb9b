"""Parsers, analyzers and generators for programming-file formats."""
