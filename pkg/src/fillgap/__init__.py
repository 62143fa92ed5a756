"""Coreset selection and Gaussian kernel ridge regression evaluation toolkit.

Submodules are imported explicitly (``fillgap.selection``, ``fillgap.regression``,
...) so that the command line entry point can configure thread limits before any
numerical library is loaded.
"""

__version__ = "0.1.0"
