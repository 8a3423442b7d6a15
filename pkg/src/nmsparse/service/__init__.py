"""HTTP service wrapper around the toolkit workflows."""

from .app import create_app

__all__ = ["create_app"]
