"""mergelab: desk-scale safe multi-agent policy-gradient lab for the double merge."""

__version__ = "0.1.0"
