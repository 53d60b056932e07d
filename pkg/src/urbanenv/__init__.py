"""urbanenv: satellite-tile land-use datasets and urban-environment analysis."""

__version__ = "0.1.0"
