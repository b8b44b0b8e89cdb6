"""Probabilistic Datalog+/- query answering with existential ontologies."""

__version__ = "0.1.0"
