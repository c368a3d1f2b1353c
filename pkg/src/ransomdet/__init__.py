"""Ransomware detection from static PE header features."""
from . import _backend

__version__ = "0.1.0"

backend = _backend.name
