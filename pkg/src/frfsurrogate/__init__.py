"""Green's function surrogate: synthetic modal FRFs, extra-trees regression and GA subset selection."""

__version__ = "0.1.0"
