"""Recognizability-aware embedding learning and face-quality evaluation."""

from .kernels import BACKEND

__version__ = "0.1.0"
