from .main import dispatch, main

__all__ = ["main", "dispatch"]
