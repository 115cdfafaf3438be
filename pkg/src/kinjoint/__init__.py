"""Joint learning of kinship verification and kinship identification."""

__version__ = "0.1.0"
