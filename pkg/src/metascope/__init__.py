"""OP_RETURN metadata analysis and stealth-address toolkit."""

__version__ = "0.1.0"
