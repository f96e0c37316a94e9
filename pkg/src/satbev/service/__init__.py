"""HTTP service wrapping the library; the CLI talks to it as a thin client."""

from .app import create_app

__all__ = ["create_app"]
