"""NN-augmented field-oriented control laboratory."""

__version__ = "0.1.0"
