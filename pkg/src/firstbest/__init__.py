"""Estimation and inference for first-best welfare and value functionals of the CATE."""

__version__ = "0.1.0"
