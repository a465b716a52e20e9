"""Flexible-payload radio resource management: link budget, exhaustive labelling,
spiking and convolutional classifiers, and an operation-count evaluation harness."""

__version__ = "0.1.0"
