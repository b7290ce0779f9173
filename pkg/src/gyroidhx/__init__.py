"""Wall-thickness optimisation of graded gyroid two-fluid heat exchangers."""

__version__ = "0.1.0"
