"""Loop-erased random walks, loop soups and their determinant identities."""

__version__ = "0.1.0"
