"""equiscale: geometric message-passing force fields and their scaling laws."""

__version__ = "0.1.0"
