"""posrec: a pluggable positional-encoding workbench for sequential recommenders."""

__version__ = "0.1.0"
