"""Electro-thermal crosstalk analysis for passive RRAM crossbars."""

__version__ = "0.1.0"
