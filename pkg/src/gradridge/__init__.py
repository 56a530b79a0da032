"""Composed surrogates ``u(x) ~ f(g(x))`` learned from values and gradients."""

__version__ = "0.1.0"
