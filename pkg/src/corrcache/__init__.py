"""Cache replacement under semi-Markov modulated request streams."""

__version__ = "0.1.0"
