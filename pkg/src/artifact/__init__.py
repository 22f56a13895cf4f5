"""Loewner chains, SLE_4 level lines of the Gaussian free field and CLE_4 exploration."""

__version__ = "0.1.0"
