"""Probabilistic MLPs with assumed-density filtering, relevance regularisation
and uncertainty-gap explanations."""

__version__ = "0.1.0"
