"""Progressive facial expression editing with local attention branches."""

__version__ = "0.1.0"
