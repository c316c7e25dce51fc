"""Discrete simulation and estimation toolkit for self-consuming generative
loops, Turing-machine output censuses and complexity-regularised repair."""

__version__ = "0.1.0"
