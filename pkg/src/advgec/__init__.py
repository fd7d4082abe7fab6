"""Adversarial training of a seq2seq grammatical error correction model."""

__version__ = "0.1.0"
