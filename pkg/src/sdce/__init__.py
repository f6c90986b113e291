"""Synthetic-data contamination market simulator and estimation toolkit."""
__version__ = "0.1.0"
