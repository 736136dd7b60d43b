"""Potential theory, interlacement and reflected-walk samplers, and spanning
forests on finite windows of transient weighted graphs."""

__version__ = "0.1.0"
