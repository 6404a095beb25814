"""Numerical toolkit for the magnetic Schrodinger inverse problem on a half space."""
__version__ = "0.1.0"
