"""Model-side export bridge for the visloc localization pipeline.

Runs dense-matching and retrieval models over image collections and
serializes their outputs into the pipeline's IMLC/IMLD exchange formats.
"""

__version__ = "0.1.0"
