"""Graph-to-sequence Transformer with relation-path encodings, built on a small numpy autodiff engine."""
__version__ = "0.1.0"
