"""Constructing and certifying strictly concave functions on model Alexandrov spaces."""
__version__ = "0.1.0"
