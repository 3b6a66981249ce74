"""Type-directed neural program synthesis from input-output examples."""

__version__ = "0.1.0"
