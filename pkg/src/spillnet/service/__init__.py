"""HTTP service wrapping the spillnet core package."""

from .app import app

__all__ = ["app"]
