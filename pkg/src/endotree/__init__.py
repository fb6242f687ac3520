"""Endogeny analysis for finite recursive tree processes."""

from ._backend import BACKEND
from .model import RtpModel, ValidationReport, builtin, checked, load, save, validate

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "RtpModel",
    "ValidationReport",
    "builtin",
    "checked",
    "load",
    "save",
    "validate",
]
