"""Model files, command line driver and bundled corpus."""

from .parser import ModelFile, parse_expression, parse_model, print_model, structure

__all__ = ["ModelFile", "parse_expression", "parse_model", "print_model", "structure"]
